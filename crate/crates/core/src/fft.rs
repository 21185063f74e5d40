use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Row-major 2D FFT that can skip all-zero trailing rows on the way in and
/// unneeded trailing rows on the way out (zero-padded convolution).
pub(crate) struct Fft2 {
    nx: usize,
    ny: usize,
    fwd_x: Arc<dyn Fft<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
}

pub(crate) struct Fft2Scratch {
    transposed: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl Fft2 {
    pub fn new(nx: usize, ny: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            nx,
            ny,
            fwd_x: planner.plan_fft_forward(nx),
            fwd_y: planner.plan_fft_forward(ny),
            inv_x: planner.plan_fft_inverse(nx),
            inv_y: planner.plan_fft_inverse(ny),
        }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn scratch(&self) -> Fft2Scratch {
        let n = [&self.fwd_x, &self.fwd_y, &self.inv_x, &self.inv_y]
            .iter()
            .map(|f| f.get_inplace_scratch_len())
            .max()
            .unwrap_or(0);
        Fft2Scratch {
            transposed: vec![Complex64::new(0.0, 0.0); self.len()],
            scratch: vec![Complex64::new(0.0, 0.0); n],
        }
    }

    fn columns(&self, buf: &mut [Complex64], fft: &Arc<dyn Fft<f64>>, s: &mut Fft2Scratch) {
        let (nx, ny) = (self.nx, self.ny);
        for x in 0..nx {
            for y in 0..ny {
                s.transposed[y * nx + x] = buf[x * ny + y];
            }
        }
        fft.process_with_scratch(&mut s.transposed, &mut s.scratch);
        for x in 0..nx {
            for y in 0..ny {
                buf[x * ny + y] = s.transposed[y * nx + x];
            }
        }
    }

    /// Unnormalized forward transform; rows at index `>= nonzero_rows` must be zero.
    pub fn forward(&self, buf: &mut [Complex64], nonzero_rows: usize, s: &mut Fft2Scratch) {
        let rows = nonzero_rows.min(self.nx);
        if rows > 0 {
            self.fwd_y
                .process_with_scratch(&mut buf[..rows * self.ny], &mut s.scratch);
        }
        let fwd_x = self.fwd_x.clone();
        self.columns(buf, &fwd_x, s);
    }

    /// Unnormalized inverse transform; only rows `< needed_rows` are valid afterwards.
    pub fn inverse(&self, buf: &mut [Complex64], needed_rows: usize, s: &mut Fft2Scratch) {
        let inv_x = self.inv_x.clone();
        self.columns(buf, &inv_x, s);
        let rows = needed_rows.min(self.nx);
        if rows > 0 {
            self.inv_y
                .process_with_scratch(&mut buf[..rows * self.ny], &mut s.scratch);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_dft() {
        let (nx, ny) = (6, 4);
        let f = Fft2::new(nx, ny);
        let mut s = f.scratch();
        let data: Vec<Complex64> = (0..nx * ny)
            .map(|i| Complex64::new((i as f64).sin(), (i as f64 * 0.3).cos()))
            .collect();
        let mut buf = data.clone();
        f.forward(&mut buf, nx, &mut s);
        // Direct DFT of one coefficient.
        let (kx, ky) = (2, 3);
        let mut d = Complex64::new(0.0, 0.0);
        for x in 0..nx {
            for y in 0..ny {
                let ph = -2.0
                    * std::f64::consts::PI
                    * ((kx * x) as f64 / nx as f64 + (ky * y) as f64 / ny as f64);
                d += data[x * ny + y] * Complex64::cis(ph);
            }
        }
        assert!((d - buf[kx * ny + ky]).norm() < 1e-12);
        f.inverse(&mut buf, nx, &mut s);
        for (a, b) in buf.iter().zip(&data) {
            assert!((a / (nx * ny) as f64 - b).norm() < 1e-12);
        }
    }
}
