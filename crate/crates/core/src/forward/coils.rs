use std::f64::consts::PI;

use ndarray::{Array3, Array4, ArrayView3};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Complex receive sensitivities, shape `(Mx, My, Mz, C)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoilMaps {
    pub maps: Array4<Complex64>,
}

impl CoilMaps {
    pub fn new(maps: Array4<Complex64>) -> Result<Self> {
        if maps.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::domain("coil maps contain non-finite values"));
        }
        if maps.shape()[3] == 0 {
            return Err(Error::domain("coil maps need at least one coil"));
        }
        Ok(CoilMaps { maps })
    }

    /// A single coil with unit sensitivity everywhere.
    pub fn unit(shape: [usize; 3]) -> Self {
        CoilMaps {
            maps: Array4::from_elem((shape[0], shape[1], shape[2], 1), Complex64::new(1.0, 0.0)),
        }
    }

    pub fn n_coils(&self) -> usize {
        self.maps.shape()[3]
    }

    pub fn shape(&self) -> [usize; 3] {
        let s = self.maps.shape();
        [s[0], s[1], s[2]]
    }

    pub fn coil(&self, c: usize) -> ArrayView3<'_, Complex64> {
        self.maps.index_axis(ndarray::Axis(3), c)
    }

    pub fn root_sum_of_squares(&self) -> Array3<f64> {
        self.maps.map_axis(ndarray::Axis(3), |s| {
            s.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
        })
    }

    pub fn check_support(&self, mask: ArrayView3<bool>) -> Result<()> {
        let rss = self.root_sum_of_squares();
        if rss.indexed_iter().any(|(i, &v)| mask[i] && !(v > 0.0)) {
            return Err(Error::domain(
                "coil sensitivity vanishes inside the support mask",
            ));
        }
        Ok(())
    }
}

/// Smooth synthetic sensitivities: Gaussian magnitude profiles centred on a
/// ring around the object, each with its own constant phase and linear phase
/// ramp. Coordinates are normalized to [-1, 1] per axis.
pub fn make_coil_maps(shape: [usize; 3], n_coils: usize) -> Result<CoilMaps> {
    if n_coils == 0 || shape.contains(&0) {
        return Err(Error::domain(
            "coil maps need positive shape and coil count",
        ));
    }
    let width = 0.8;
    let mut maps = Array4::zeros((shape[0], shape[1], shape[2], n_coils));
    for c in 0..n_coils {
        let phi = 2.0 * PI * c as f64 / n_coils as f64;
        let centre = [
            0.9 * phi.cos(),
            0.9 * phi.sin(),
            if c % 2 == 0 { 0.3 } else { -0.3 },
        ];
        let ramp = [0.4 * phi.sin(), -0.4 * phi.cos(), 0.2];
        let phase0 = phi + 0.3;
        for ((x, y, z, cc), m) in maps.indexed_iter_mut() {
            if cc != c {
                continue;
            }
            let p = [
                normalized(x, shape[0]),
                normalized(y, shape[1]),
                normalized(z, shape[2]),
            ];
            let d2: f64 = (0..3).map(|a| (p[a] - centre[a]).powi(2)).sum();
            let mag = (-d2 / (2.0 * width * width)).exp();
            let ph = phase0 + PI * (0..3).map(|a| ramp[a] * p[a]).sum::<f64>();
            *m = Complex64::from_polar(mag, ph);
        }
    }
    CoilMaps::new(maps)
}

/// Voxel-centre coordinate in [-1, 1].
pub(crate) fn normalized(i: usize, n: usize) -> f64 {
    (i as f64 + 0.5) / n as f64 * 2.0 - 1.0
}
