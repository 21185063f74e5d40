//! Exact multichannel non-uniform DFT.
//!
//! `b_c(k) = sum_m s_c(m) x(m) exp(-2 pi i k . r_m)` with voxel positions
//! `r = (m - floor(M/2)) / M` per axis. Evaluation is direct; samples sharing
//! a kz value reuse one z-contracted plane, which makes stack-of-stars
//! frames cost `O(Mx My)` per sample instead of `O(Mx My Mz)`.

use std::f64::consts::PI;

use ndarray::{Array2, Array3, ArrayView2, ArrayView3};
use num_complex::Complex64;

use super::coils::CoilMaps;
use crate::error::{Error, Result};

/// Normalized voxel positions along an axis of length `n`.
pub fn voxel_positions(n: usize) -> Vec<f64> {
    (0..n)
        .map(|m| (m as f64 - (n / 2) as f64) / n as f64)
        .collect()
}

/// `exp(sign * 2 pi i k r)` for every position.
fn phasors(k: f64, positions: &[f64], sign: f64) -> Vec<Complex64> {
    positions
        .iter()
        .map(|&r| Complex64::cis(sign * 2.0 * PI * k * r))
        .collect()
}

pub(crate) struct KzGroup {
    pub kz: f64,
    pub samples: Vec<usize>,
}

/// Groups sample indices by exact kz value, in order of first appearance.
pub(crate) fn group_by_kz(frame: &[[f64; 3]]) -> Vec<KzGroup> {
    let mut groups: Vec<KzGroup> = Vec::new();
    for (i, k) in frame.iter().enumerate() {
        match groups.iter_mut().rev().find(|g| g.kz == k[2]) {
            Some(g) => g.samples.push(i),
            None => groups.push(KzGroup {
                kz: k[2],
                samples: vec![i],
            }),
        }
    }
    groups
}

fn check_shape(shape: [usize; 3], coils: &CoilMaps) -> Result<()> {
    if coils.shape() != shape {
        return Err(Error::domain(format!(
            "image shape {:?} does not match coil maps {:?}",
            shape,
            coils.shape()
        )));
    }
    Ok(())
}

/// Samples x coils.
pub fn nudft_forward(
    image: ArrayView3<Complex64>,
    frame: &[[f64; 3]],
    coils: &CoilMaps,
) -> Result<Array2<Complex64>> {
    let (nx, ny, nz) = image.dim();
    check_shape([nx, ny, nz], coils)?;
    let nc = coils.n_coils();
    let (px, py, pz) = (
        voxel_positions(nx),
        voxel_positions(ny),
        voxel_positions(nz),
    );

    let weighted: Vec<Vec<Complex64>> = (0..nc)
        .map(|c| {
            image
                .iter()
                .zip(coils.coil(c).iter())
                .map(|(x, s)| x * s)
                .collect()
        })
        .collect();

    let mut out = Array2::zeros((frame.len(), nc));
    let mut planes = vec![vec![Complex64::new(0.0, 0.0); nx * ny]; nc];
    for group in group_by_kz(frame) {
        let ez = phasors(group.kz, &pz, -1.0);
        for (plane, w) in planes.iter_mut().zip(&weighted) {
            for (p, col) in plane.iter_mut().zip(w.chunks_exact(nz)) {
                *p = col.iter().zip(&ez).map(|(a, b)| a * b).sum();
            }
        }
        for &i in &group.samples {
            let ex = phasors(frame[i][0], &px, -1.0);
            let ey = phasors(frame[i][1], &py, -1.0);
            for (c, plane) in planes.iter().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for (row, &ex_x) in plane.chunks_exact(ny).zip(&ex) {
                    let inner: Complex64 = row.iter().zip(&ey).map(|(a, b)| a * b).sum();
                    acc += ex_x * inner;
                }
                out[[i, c]] = acc;
            }
        }
    }
    Ok(out)
}

/// Conjugate transpose of [`nudft_forward`].
pub fn nudft_adjoint(
    samples: ArrayView2<Complex64>,
    frame: &[[f64; 3]],
    coils: &CoilMaps,
    shape: [usize; 3],
) -> Result<Array3<Complex64>> {
    check_shape(shape, coils)?;
    let [nx, ny, nz] = shape;
    let nc = coils.n_coils();
    if samples.dim() != (frame.len(), nc) {
        return Err(Error::domain(format!(
            "sample array {:?} does not match {} samples x {} coils",
            samples.dim(),
            frame.len(),
            nc
        )));
    }
    let (px, py, pz) = (
        voxel_positions(nx),
        voxel_positions(ny),
        voxel_positions(nz),
    );
    let m = nx * ny * nz;
    let mut acc = vec![vec![Complex64::new(0.0, 0.0); m]; nc];
    let mut planes = vec![vec![Complex64::new(0.0, 0.0); nx * ny]; nc];
    for group in group_by_kz(frame) {
        for p in planes.iter_mut() {
            p.fill(Complex64::new(0.0, 0.0));
        }
        for &i in &group.samples {
            let ex = phasors(frame[i][0], &px, 1.0);
            let ey = phasors(frame[i][1], &py, 1.0);
            for (c, plane) in planes.iter_mut().enumerate() {
                let b = samples[[i, c]];
                if b == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for (row, &ex_x) in plane.chunks_exact_mut(ny).zip(&ex) {
                    let t = b * ex_x;
                    for (q, &e) in row.iter_mut().zip(&ey) {
                        *q += t * e;
                    }
                }
            }
        }
        let ez = phasors(group.kz, &pz, 1.0);
        for (a, plane) in acc.iter_mut().zip(&planes) {
            for (col, &q) in a.chunks_exact_mut(nz).zip(plane) {
                for (v, &e) in col.iter_mut().zip(&ez) {
                    *v += q * e;
                }
            }
        }
    }
    let mut out = Array3::zeros((nx, ny, nz));
    for (c, a) in acc.iter().enumerate() {
        for ((o, s), v) in out.iter_mut().zip(coils.coil(c).iter()).zip(a) {
            *o += s.conj() * v;
        }
    }
    Ok(out)
}
