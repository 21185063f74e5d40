//! Small same-padding convolutional network with hand-written reverse mode
//! and forward-over-reverse derivatives.
//!
//! Images are stored channel-major as `(channels, height * width)` matrices.
//! Convolutions go through an im2col matrix so every heavy step is a GEMM.
//! Besides plain forward/backward the network supports a tangent
//! (Jacobian-vector) pass and reverse-mode differentiation of that tangent
//! pass with respect to the weights, which is what training on a loss built
//! from input gradients needs.

use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Silu,
    Tanh,
}

impl Activation {
    /// Value, first and second derivative.
    #[inline]
    fn eval(self, x: f64) -> (f64, f64, f64) {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                let d1 = s * (1.0 + x * (1.0 - s));
                let d2 = s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s));
                (x * s, d1, d2)
            }
            Activation::Tanh => {
                let t = x.tanh();
                let d1 = 1.0 - t * t;
                (t, d1, -2.0 * t * d1)
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Silu => "silu",
            Activation::Tanh => "tanh",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
}

/// Layer list plus activation. With `residual` the network output is added
/// to its input, so zero weights give the identity map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkArch {
    pub layers: Vec<ConvSpec>,
    pub activation: Activation,
    pub residual: bool,
}

impl Default for NetworkArch {
    /// Channels 2-16-32-32-16-2, 3x3 kernels, SiLU, residual.
    fn default() -> Self {
        NetworkArch::from_channels(&[2, 16, 32, 32, 16, 2], 3, Activation::Silu, true)
    }
}

impl NetworkArch {
    pub fn from_channels(
        channels: &[usize],
        kernel_size: usize,
        activation: Activation,
        residual: bool,
    ) -> Self {
        NetworkArch {
            layers: channels
                .windows(2)
                .map(|w| ConvSpec {
                    in_channels: w[0],
                    out_channels: w[1],
                    kernel_size,
                })
                .collect(),
            activation,
            residual,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (Some(first), Some(last)) = (self.layers.first(), self.layers.last()) else {
            return Err(Error::domain("network needs at least one layer"));
        };
        if first.in_channels != 2 || last.out_channels != 2 {
            return Err(Error::domain("network must map 2 channels to 2 channels"));
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].out_channels != pair[1].in_channels {
                return Err(Error::domain(format!(
                    "layer {i} outputs {} channels but layer {} takes {}",
                    pair[0].out_channels,
                    i + 1,
                    pair[1].in_channels
                )));
            }
        }
        for l in &self.layers {
            if l.kernel_size % 2 == 0 || l.kernel_size == 0 || l.out_channels == 0 {
                return Err(Error::domain(
                    "kernels must have odd size and layers positive width",
                ));
            }
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.out_channels * (l.in_channels * l.kernel_size * l.kernel_size + 1))
            .sum()
    }

    /// Offsets of each layer's weights and biases inside the flat parameter vector.
    pub(crate) fn offsets(&self) -> Vec<(usize, usize)> {
        let mut off = 0;
        self.layers
            .iter()
            .map(|l| {
                let nw = l.out_channels * l.in_channels * l.kernel_size * l.kernel_size;
                let o = (off, off + nw);
                off += nw + l.out_channels;
                o
            })
            .collect()
    }
}

/// Layer weight matrix `(out, in*k*k)` and bias view into the flat vector.
fn layer_params<'a>(
    arch: &NetworkArch,
    theta: &'a [f64],
    l: usize,
    offsets: &[(usize, usize)],
) -> (ArrayView2<'a, f64>, &'a [f64]) {
    let spec = arch.layers[l];
    let (w0, b0) = offsets[l];
    let cols = spec.in_channels * spec.kernel_size * spec.kernel_size;
    let w = ArrayView2::from_shape((spec.out_channels, cols), &theta[w0..b0]).expect("layer size");
    (w, &theta[b0..b0 + spec.out_channels])
}

fn im2col(a: &Array2<f64>, h: usize, w: usize, k: usize) -> Array2<f64> {
    let a = a.as_standard_layout();
    let c_in = a.nrows();
    let p = k / 2;
    let mut cols = Array2::zeros((c_in * k * k, h * w));
    for ci in 0..c_in {
        let src = a.row(ci);
        let src = src.as_slice().expect("contiguous row");
        for di in 0..k {
            for dj in 0..k {
                let mut row = cols.row_mut((ci * k + di) * k + dj);
                let dst = row.as_slice_mut().expect("contiguous row");
                for y in 0..h {
                    let sy = y as isize + di as isize - p as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    let x_lo = p.saturating_sub(dj);
                    let x_hi = (w + p).saturating_sub(dj).min(w);
                    for x in x_lo..x_hi {
                        dst[y * w + x] = src[sy * w + x + dj - p];
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &Array2<f64>, c_in: usize, h: usize, w: usize, k: usize) -> Array2<f64> {
    let cols = cols.as_standard_layout();
    let p = k / 2;
    let mut a = Array2::zeros((c_in, h * w));
    for ci in 0..c_in {
        let mut dst_row = a.row_mut(ci);
        let dst = dst_row.as_slice_mut().expect("contiguous row");
        for di in 0..k {
            for dj in 0..k {
                let row = cols.row((ci * k + di) * k + dj);
                let src = row.as_slice().expect("contiguous row");
                for y in 0..h {
                    let sy = y as isize + di as isize - p as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    let x_lo = p.saturating_sub(dj);
                    let x_hi = (w + p).saturating_sub(dj).min(w);
                    for x in x_lo..x_hi {
                        dst[sy * w + x + dj - p] += src[y * w + x];
                    }
                }
            }
        }
    }
    a
}

struct LayerCache {
    cols: Array2<f64>,
    pre: Array2<f64>,
}

/// Intermediate values of one forward pass.
pub(crate) struct Tape {
    h: usize,
    w: usize,
    layers: Vec<LayerCache>,
    /// Raw network output (before the residual connection).
    pub output: Array2<f64>,
}

/// Tangent values of a Jacobian-vector pass.
pub(crate) struct TangentTape {
    cols: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    /// Raw network directional derivative (before the residual connection).
    pub output: Array2<f64>,
}

pub(crate) struct Network<'a> {
    pub arch: &'a NetworkArch,
    pub theta: &'a [f64],
    offsets: Vec<(usize, usize)>,
}

impl<'a> Network<'a> {
    pub fn new(arch: &'a NetworkArch, theta: &'a [f64]) -> Self {
        Network {
            arch,
            theta,
            offsets: arch.offsets(),
        }
    }

    fn hidden(&self, l: usize) -> bool {
        l + 1 < self.arch.layers.len()
    }

    pub fn forward(&self, input: &Array2<f64>, h: usize, w: usize) -> Tape {
        let act = self.arch.activation;
        let mut a = input.clone();
        let mut layers = Vec::with_capacity(self.arch.layers.len());
        for (l, spec) in self.arch.layers.iter().enumerate() {
            let (wm, bias) = layer_params(self.arch, self.theta, l, &self.offsets);
            let cols = im2col(&a, h, w, spec.kernel_size);
            let mut pre = wm.dot(&cols);
            for (mut row, &b) in pre.axis_iter_mut(Axis(0)).zip(bias) {
                if b != 0.0 {
                    row += b;
                }
            }
            a = if self.hidden(l) {
                pre.mapv(|x| act.eval(x).0)
            } else {
                pre.clone()
            };
            layers.push(LayerCache { cols, pre });
        }
        Tape {
            h,
            w,
            layers,
            output: a,
        }
    }

    /// Vector-Jacobian product of the raw network with `grad_out`.
    pub fn vjp_input(&self, tape: &Tape, grad_out: &Array2<f64>) -> Array2<f64> {
        let act = self.arch.activation;
        let mut g = grad_out.clone();
        for l in (0..self.arch.layers.len()).rev() {
            let spec = self.arch.layers[l];
            if self.hidden(l) {
                ndarray::Zip::from(&mut g)
                    .and(&tape.layers[l].pre)
                    .for_each(|gv, &z| *gv *= act.eval(z).1);
            }
            let (wm, _) = layer_params(self.arch, self.theta, l, &self.offsets);
            let gcols = wm.t().dot(&g);
            g = col2im(&gcols, spec.in_channels, tape.h, tape.w, spec.kernel_size);
        }
        g
    }

    /// Directional derivative of the raw network along `dir`, reusing the
    /// primal pre-activations in `tape`.
    pub fn jvp(&self, tape: &Tape, dir: &Array2<f64>) -> TangentTape {
        let act = self.arch.activation;
        let mut a = dir.clone();
        let mut cols_all = Vec::with_capacity(self.arch.layers.len());
        let mut pre_all = Vec::with_capacity(self.arch.layers.len());
        for (l, spec) in self.arch.layers.iter().enumerate() {
            let (wm, _) = layer_params(self.arch, self.theta, l, &self.offsets);
            let cols = im2col(&a, tape.h, tape.w, spec.kernel_size);
            let pre = wm.dot(&cols);
            a = if self.hidden(l) {
                let mut t = pre.clone();
                ndarray::Zip::from(&mut t)
                    .and(&tape.layers[l].pre)
                    .for_each(|tv, &z| *tv *= act.eval(z).1);
                t
            } else {
                pre.clone()
            };
            cols_all.push(cols);
            pre_all.push(pre);
        }
        TangentTape {
            cols: cols_all,
            pre: pre_all,
            output: a,
        }
    }

    /// Gradient with respect to the weights of
    /// `<seed_out, N(x)> + <seed_tan, J_N(x) d>`, given the primal and tangent passes.
    pub fn dual_param_grad(
        &self,
        tape: &Tape,
        tangent: &TangentTape,
        seed_out: &Array2<f64>,
        seed_tan: &Array2<f64>,
        grad: &mut [f64],
    ) {
        let act = self.arch.activation;
        let mut g_p = seed_out.clone();
        let mut g_t = seed_tan.clone();
        for l in (0..self.arch.layers.len()).rev() {
            let spec = self.arch.layers[l];
            let cache = &tape.layers[l];
            if self.hidden(l) {
                // a = f(z), a_dot = f'(z) z_dot
                let mut gz = g_p;
                let mut gz_dot = g_t.clone();
                ndarray::Zip::from(&mut gz)
                    .and(&mut gz_dot)
                    .and(&g_t)
                    .and(&cache.pre)
                    .and(&tangent.pre[l])
                    .for_each(|gp, gd, &gt, &z, &zd| {
                        let (_, d1, d2) = act.eval(z);
                        *gp = *gp * d1 + gt * d2 * zd;
                        *gd = gt * d1;
                    });
                g_p = gz;
                g_t = gz_dot;
            }
            let (w0, b0) = self.offsets[l];
            let cols = spec.in_channels * spec.kernel_size * spec.kernel_size;
            {
                let mut gw = ndarray::ArrayViewMut2::from_shape(
                    (spec.out_channels, cols),
                    &mut grad[w0..b0],
                )
                .expect("layer size");
                ndarray::linalg::general_mat_mul(1.0, &g_p, &cache.cols.t(), 1.0, &mut gw);
                ndarray::linalg::general_mat_mul(1.0, &g_t, &tangent.cols[l].t(), 1.0, &mut gw);
            }
            for (gb, row) in grad[b0..b0 + spec.out_channels].iter_mut().zip(g_p.rows()) {
                *gb += row.sum();
            }
            if l > 0 {
                let (wm, _) = layer_params(self.arch, self.theta, l, &self.offsets);
                let stacked = ndarray::concatenate(Axis(1), &[g_p.view(), g_t.view()])
                    .expect("same channel count");
                let gcols = wm.t().dot(&stacked);
                let hw = tape.h * tape.w;
                let gp_cols = gcols.slice(s![.., ..hw]).to_owned();
                let gt_cols = gcols.slice(s![.., hw..]).to_owned();
                g_p = col2im(&gp_cols, spec.in_channels, tape.h, tape.w, spec.kernel_size);
                g_t = col2im(&gt_cols, spec.in_channels, tape.h, tape.w, spec.kernel_size);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_theta(arch: &NetworkArch, seed: u64, scale: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..arch.n_params())
            .map(|_| rng.gen_range(-scale..scale))
            .collect()
    }

    fn random_image(c: usize, hw: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((c, hw), || rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn activation_derivatives_match_finite_differences() {
        for act in [Activation::Silu, Activation::Tanh] {
            for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
                let h = 1e-5;
                let (_, d1, d2) = act.eval(x);
                let fd1 = (act.eval(x + h).0 - act.eval(x - h).0) / (2.0 * h);
                let fd2 = (act.eval(x + h).1 - act.eval(x - h).1) / (2.0 * h);
                assert!((d1 - fd1).abs() < 1e-8, "{act:?} d1 at {x}");
                assert!((d2 - fd2).abs() < 1e-8, "{act:?} d2 at {x}");
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let (c, h, w, k) = (3, 5, 4, 3);
        let a = random_image(c, h * w, 1);
        let b = random_image(c * k * k, h * w, 2);
        let lhs: f64 = (&im2col(&a, h, w, k) * &b).sum();
        let rhs: f64 = (&a * &col2im(&b, c, h, w, k)).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn single_layer_matches_direct_convolution() {
        let arch = NetworkArch::from_channels(&[2, 2], 3, Activation::Silu, false);
        let theta = random_theta(&arch, 3, 1.0);
        let (h, w) = (4, 5);
        let x = random_image(2, h * w, 4);
        let net = Network::new(&arch, &theta);
        let out = net.forward(&x, h, w).output;
        let (wm, bias) = layer_params(&arch, &theta, 0, &arch.offsets());
        for o in 0..2 {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = bias[o];
                    for ci in 0..2 {
                        for di in 0..3 {
                            for dj in 0..3 {
                                let (sy, sx) = (y as isize + di - 1, xx as isize + dj - 1);
                                if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                                    acc += wm[[o, (ci * 3 + di as usize) * 3 + dj as usize]]
                                        * x[[ci, sy as usize * w + sx as usize]];
                                }
                            }
                        }
                    }
                    assert!((acc - out[[o, y * w + xx]]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn vjp_and_jvp_agree_with_finite_differences() {
        let arch = NetworkArch::from_channels(&[2, 4, 3, 2], 3, Activation::Silu, false);
        let theta = random_theta(&arch, 5, 0.5);
        let (h, w) = (5, 4);
        let x = random_image(2, h * w, 6);
        let d = random_image(2, h * w, 7);
        let g = random_image(2, h * w, 8);
        let net = Network::new(&arch, &theta);
        let tape = net.forward(&x, h, w);
        let jv = net.jvp(&tape, &d).output;
        let vj = net.vjp_input(&tape, &g);
        // <g, J d> == <J^T g, d>
        assert!(((&g * &jv).sum() - (&vj * &d).sum()).abs() < 1e-10);
        let eps = 1e-6;
        let plus = net.forward(&(&x + &(&d * eps)), h, w).output;
        let minus = net.forward(&(&x - &(&d * eps)), h, w).output;
        let fd = (&plus - &minus) / (2.0 * eps);
        let err = (&fd - &jv).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(err < 1e-7, "jvp error {err}");
    }

    #[test]
    fn dual_param_grad_matches_finite_differences() {
        let arch = NetworkArch::from_channels(&[2, 3, 2], 3, Activation::Tanh, false);
        let theta = random_theta(&arch, 9, 0.5);
        let (h, w) = (4, 4);
        let x = random_image(2, h * w, 10);
        let d = random_image(2, h * w, 11);
        let so = random_image(2, h * w, 12);
        let st = random_image(2, h * w, 13);
        let objective = |th: &[f64]| {
            let net = Network::new(&arch, th);
            let tape = net.forward(&x, h, w);
            let tan = net.jvp(&tape, &d);
            (&so * &tape.output).sum() + (&st * &tan.output).sum()
        };
        let net = Network::new(&arch, &theta);
        let tape = net.forward(&x, h, w);
        let tan = net.jvp(&tape, &d);
        let mut grad = vec![0.0; theta.len()];
        net.dual_param_grad(&tape, &tan, &so, &st, &mut grad);
        let eps = 1e-6;
        for i in (0..theta.len()).step_by(7) {
            let mut p = theta.clone();
            p[i] += eps;
            let mut m = theta.clone();
            m[i] -= eps;
            let fd = (objective(&p) - objective(&m)) / (2.0 * eps);
            assert!(
                (fd - grad[i]).abs() < 1e-6 * fd.abs().max(1.0),
                "param {i}: {fd} vs {}",
                grad[i]
            );
        }
    }

    #[test]
    fn arch_validation() {
        NetworkArch::default().validate().unwrap();
        assert!(
            NetworkArch::from_channels(&[3, 2], 3, Activation::Silu, true)
                .validate()
                .is_err()
        );
        assert!(
            NetworkArch::from_channels(&[2, 4, 3], 3, Activation::Silu, true)
                .validate()
                .is_err()
        );
        assert!(
            NetworkArch::from_channels(&[2, 2], 2, Activation::Silu, true)
                .validate()
                .is_err()
        );
        let mut broken = NetworkArch::default();
        broken.layers[1].in_channels = 8;
        assert!(broken.validate().is_err());
    }
}
