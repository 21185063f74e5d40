use ndarray::Array2;
use num_complex::Complex64;

use crate::energy::{slice_of, SliceAxis};
use crate::error::{Error, Result};
use crate::forward::SpatialFactor;

#[derive(Clone, Debug)]
pub struct TrainingSlices {
    pub slices: Vec<Array2<Complex64>>,
    /// Factor applied to each retained slice to bring its peak to 1.
    pub scales: Vec<f64>,
}

/// Slices along all three axes of every basis volume. A slice is dropped
/// when its norm falls below `snr_floor` times the largest slice norm of the
/// same basis volume; survivors are scaled to unit peak magnitude.
pub fn extract_training_slices(
    factors: &[SpatialFactor],
    snr_floor: f64,
) -> Result<TrainingSlices> {
    if factors.is_empty() {
        return Err(Error::domain("no spatial factors to slice"));
    }
    if !(snr_floor >= 0.0 && snr_floor.is_finite()) {
        return Err(Error::domain(format!(
            "snr_floor must be >= 0, got {snr_floor}"
        )));
    }
    let mut out = TrainingSlices {
        slices: Vec::new(),
        scales: Vec::new(),
    };
    for u in factors {
        let shape = u.shape();
        for r in 0..u.rank() {
            let mut candidates = Vec::new();
            for axis in SliceAxis::ALL {
                let n = shape[match axis {
                    SliceAxis::X => 0,
                    SliceAxis::Y => 1,
                    SliceAxis::Z => 2,
                }];
                for i in 0..n {
                    let s = slice_of(u, axis, i, r);
                    let norm = s.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
                    candidates.push((s, norm));
                }
            }
            let max_norm = candidates.iter().map(|c| c.1).fold(0.0, f64::max);
            for (s, norm) in candidates {
                if norm < snr_floor * max_norm {
                    continue;
                }
                let peak = s.iter().map(|v| v.norm()).fold(0.0, f64::max);
                let scale = if peak > 0.0 { 1.0 / peak } else { 1.0 };
                out.slices.push(s.mapv(|v| v * scale));
                out.scales.push(scale);
            }
        }
    }
    if out.slices.is_empty() {
        return Err(Error::domain("every slice fell below the SNR floor"));
    }
    Ok(out)
}
