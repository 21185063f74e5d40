//! Contrast synthesis from the factorization, dictionary-matching T1
//! estimation in the subspace, and image-quality metrics.

use ndarray::{Array2, Array3, ArrayView3, Zip};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::forward::SpatialFactor;
use crate::seqsim::{SignalDictionary, TemporalBasis};

/// Reported in place of an infinite PSNR.
pub const PSNR_CAP_DB: f64 = 300.0;

/// Image at frame `tau`: `sum_r u_r v[r, tau]`.
pub fn synthesize_contrast(
    u: &SpatialFactor,
    basis: &TemporalBasis,
    tau: usize,
) -> Result<Array3<Complex64>> {
    if tau >= basis.n_frames() {
        return Err(Error::domain(format!(
            "frame {tau} out of range for {} frames",
            basis.n_frames()
        )));
    }
    if basis.rank() != u.rank() {
        return Err(Error::domain(format!(
            "basis rank {} does not match spatial factor rank {}",
            basis.rank(),
            u.rank()
        )));
    }
    Ok(u.combine(basis.v.column(tau).iter().copied()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct T1Map {
    /// Seconds; 0 outside the mask.
    pub t1: Array3<f64>,
    pub amplitude: Array3<Complex64>,
    /// `||u - a c|| / ||u||` of the best match; 0 outside the mask and for zero voxels.
    pub match_residual: Array3<f64>,
}

/// Per-voxel dictionary matching by normalized complex correlation of the
/// subspace coefficients with the projected atoms. Ties go to the smaller
/// T1 index; all-zero voxels get the smallest grid T1 and zero amplitude.
pub fn fit_t1_dictionary(
    u: &SpatialFactor,
    basis: &TemporalBasis,
    dict: &SignalDictionary,
    mask: ArrayView3<bool>,
) -> Result<T1Map> {
    let shape = u.shape();
    if mask.shape() != shape {
        return Err(Error::domain(format!(
            "mask shape {:?} does not match factor shape {shape:?}",
            mask.shape()
        )));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::domain("mask selects no voxels"));
    }
    if dict.is_empty() || dict.n_echoes() != basis.n_frames() {
        return Err(Error::domain(format!(
            "dictionary has {} echoes, basis has {} frames",
            dict.n_echoes(),
            basis.n_frames()
        )));
    }
    if basis.rank() != u.rank() {
        return Err(Error::domain(
            "basis rank does not match spatial factor rank",
        ));
    }
    // Projected atoms, one row per grid entry, and their norms.
    let atoms: Array2<f64> = dict.signals.dot(&basis.v.t());
    let norms: Vec<f64> = atoms.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let rank = u.rank();

    let mut t1 = Array3::zeros((shape[0], shape[1], shape[2]));
    let mut amplitude = Array3::zeros((shape[0], shape[1], shape[2]));
    let mut match_residual = Array3::zeros((shape[0], shape[1], shape[2]));
    let mut coeffs = vec![Complex64::new(0.0, 0.0); rank];
    for ((idx, &inside), t1_out) in mask.indexed_iter().zip(t1.iter_mut()) {
        if !inside {
            continue;
        }
        let (x, y, z) = idx;
        for (r, c) in coeffs.iter_mut().enumerate() {
            *c = u.0[[x, y, z, r]];
        }
        let u_norm = coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if u_norm == 0.0 {
            *t1_out = dict.t1_grid[0];
            continue;
        }
        let mut best = (0usize, f64::NEG_INFINITY, Complex64::new(0.0, 0.0));
        for (i, atom) in atoms.rows().into_iter().enumerate() {
            if norms[i] == 0.0 {
                continue;
            }
            let ip: Complex64 = coeffs.iter().zip(atom.iter()).map(|(c, &a)| c * a).sum();
            let score = ip.norm() / norms[i];
            if score > best.1 {
                best = (i, score, ip);
            }
        }
        let (i, score, ip) = best;
        *t1_out = dict.t1_grid[i];
        let a = ip / (norms[i] * norms[i]);
        amplitude[idx] = a;
        // ||u - a c||^2 = ||u||^2 - |<u, c>|^2 / ||c||^2
        let rel = (1.0 - (score / u_norm).powi(2)).max(0.0).sqrt();
        match_residual[idx] = rel.min(1.0);
    }
    Ok(T1Map {
        t1,
        amplitude,
        match_residual,
    })
}

fn masked_pairs(
    estimate: ArrayView3<f64>,
    reference: ArrayView3<f64>,
    mask: ArrayView3<bool>,
) -> Result<Vec<(f64, f64)>> {
    if estimate.shape() != reference.shape() || mask.shape() != reference.shape() {
        return Err(Error::domain(format!(
            "shape mismatch: estimate {:?}, reference {:?}, mask {:?}",
            estimate.shape(),
            reference.shape(),
            mask.shape()
        )));
    }
    let mut out = Vec::new();
    Zip::from(&estimate)
        .and(&reference)
        .and(&mask)
        .for_each(|&e, &r, &m| {
            if m {
                out.push((e, r));
            }
        });
    if out.is_empty() {
        return Err(Error::domain("mask selects no voxels"));
    }
    Ok(out)
}

/// `20 log10(peak / rmse)` over the mask, peak = max |reference| there.
pub fn psnr(
    estimate: ArrayView3<f64>,
    reference: ArrayView3<f64>,
    mask: ArrayView3<bool>,
) -> Result<f64> {
    let pairs = masked_pairs(estimate, reference, mask)?;
    let peak = pairs.iter().map(|p| p.1.abs()).fold(0.0, f64::max);
    if peak == 0.0 {
        return Err(Error::domain("reference is zero on the mask"));
    }
    let mse = pairs.iter().map(|(e, r)| (e - r) * (e - r)).sum::<f64>() / pairs.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((20.0 * (peak / mse.sqrt()).log10()).min(PSNR_CAP_DB))
}

/// `|estimate - reference|` inside the mask, 0 outside.
pub fn error_map(
    estimate: ArrayView3<f64>,
    reference: ArrayView3<f64>,
    mask: ArrayView3<bool>,
) -> Result<Array3<f64>> {
    if estimate.shape() != reference.shape() || mask.shape() != reference.shape() {
        return Err(Error::domain("estimate, reference and mask shapes differ"));
    }
    let mut out = Array3::zeros(reference.raw_dim());
    Zip::from(&mut out)
        .and(&estimate)
        .and(&reference)
        .and(&mask)
        .for_each(|o, &e, &r, &m| {
            if m {
                *o = (e - r).abs();
            }
        });
    Ok(out)
}

/// Mean of `|estimate - reference|` over the mask.
pub fn mean_abs_error(
    estimate: ArrayView3<f64>,
    reference: ArrayView3<f64>,
    mask: ArrayView3<bool>,
) -> Result<f64> {
    let pairs = masked_pairs(estimate, reference, mask)?;
    Ok(pairs.iter().map(|(e, r)| (e - r).abs()).sum::<f64>() / pairs.len() as f64)
}
