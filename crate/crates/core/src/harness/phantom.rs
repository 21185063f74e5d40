use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::coils::normalized;

/// Ellipsoidal compartment. Geometry is in normalized coordinates where the
/// field of view spans [-1, 1] on every axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tissue {
    pub t1: f64,
    pub pd: f64,
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
}

impl Tissue {
    fn contains(&self, p: [f64; 3]) -> bool {
        (0..3)
            .map(|a| ((p[a] - self.center[a]) / self.semi_axes[a]).powi(2))
            .sum::<f64>()
            <= 1.0
    }
}

/// Three nested compartments: outer T1 1.4 s, middle 0.8 s, inner 4.0 s.
pub fn default_tissues() -> Vec<Tissue> {
    vec![
        Tissue {
            t1: 1.4,
            pd: 1.0,
            center: [0.0, 0.0, 0.0],
            semi_axes: [0.85, 0.75, 0.8],
        },
        Tissue {
            t1: 0.8,
            pd: 0.8,
            center: [0.0, 0.05, 0.0],
            semi_axes: [0.6, 0.5, 0.55],
        },
        Tissue {
            t1: 4.0,
            pd: 1.0,
            center: [0.12, -0.05, 0.05],
            semi_axes: [0.22, 0.28, 0.3],
        },
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub t1_map: Array3<f64>,
    pub proton_density: Array3<f64>,
    pub support_mask: Array3<bool>,
}

impl Phantom {
    pub fn shape(&self) -> [usize; 3] {
        let s = self.t1_map.shape();
        [s[0], s[1], s[2]]
    }
}

/// Rasterizes the compartments in order, later ones overwriting earlier.
pub fn make_phantom(size: [usize; 3], tissues: &[Tissue]) -> Result<Phantom> {
    if size.iter().any(|&n| n < 8) {
        return Err(Error::domain(format!(
            "phantom size {size:?} must be >= 8 per axis"
        )));
    }
    if tissues.is_empty() {
        return Err(Error::domain("phantom needs at least one tissue"));
    }
    for (i, t) in tissues.iter().enumerate() {
        if !t.semi_axes.iter().all(|&a| a > 0.0 && a.is_finite())
            || !t.center.iter().all(|c| c.is_finite())
        {
            return Err(Error::domain(format!(
                "tissue {i} has a degenerate ellipsoid"
            )));
        }
        if !(t.t1 > 0.0 && t.t1.is_finite() && t.pd >= 0.0 && t.pd.is_finite()) {
            return Err(Error::domain(format!(
                "tissue {i} needs T1 > 0 and PD >= 0"
            )));
        }
    }
    let dim = (size[0], size[1], size[2]);
    let mut t1_map = Array3::zeros(dim);
    let mut proton_density = Array3::zeros(dim);
    let mut support_mask = Array3::from_elem(dim, false);
    for ((x, y, z), m) in support_mask.indexed_iter_mut() {
        let p = [
            normalized(x, size[0]),
            normalized(y, size[1]),
            normalized(z, size[2]),
        ];
        for t in tissues {
            if t.contains(p) {
                *m = true;
                t1_map[[x, y, z]] = t.t1;
                proton_density[[x, y, z]] = t.pd;
            }
        }
    }
    if !support_mask.iter().any(|&m| m) {
        return Err(Error::domain(
            "phantom compartments contain no voxel centres",
        ));
    }
    Ok(Phantom {
        t1_map,
        proton_density,
        support_mask,
    })
}

/// Randomized nested-ellipsoid layouts for building training data: an
/// outer body and several inner compartments with log-uniform T1 in
/// [0.3, 4.5] s and PD in [0.5, 1].
pub fn random_tissues(seed: u64) -> Vec<Tissue> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| Tissue {
        t1: (rng.gen_range(0.3f64.ln()..4.5f64.ln())).exp(),
        pd: rng.gen_range(0.5..1.0),
        center: [0.0; 3],
        semi_axes: [1.0; 3],
    };
    let mut body = draw(&mut rng);
    body.center = [
        rng.gen_range(-0.05..0.05),
        rng.gen_range(-0.05..0.05),
        rng.gen_range(-0.05..0.05),
    ];
    body.semi_axes = [
        rng.gen_range(0.6..0.85),
        rng.gen_range(0.6..0.85),
        rng.gen_range(0.6..0.85),
    ];
    let n_inner = rng.gen_range(2..6);
    let mut out = vec![body.clone()];
    for _ in 0..n_inner {
        let mut t = draw(&mut rng);
        for a in 0..3 {
            t.semi_axes[a] = rng.gen_range(0.1..0.5) * body.semi_axes[a];
            let room = body.semi_axes[a] - t.semi_axes[a];
            t.center[a] = body.center[a] + rng.gen_range(-0.6..0.6) * room;
        }
        out.push(t);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn single_tissue_filling_volume_is_constant() {
        let t = Tissue {
            t1: 1.2,
            pd: 0.7,
            center: [0.0; 3],
            semi_axes: [2.0; 3],
        };
        let p = make_phantom([8, 8, 8], &[t]).unwrap();
        assert!(p.support_mask.iter().all(|&m| m));
        assert!(p.t1_map.iter().all(|&v| v == 1.2));
    }

    #[test]
    fn voxel_counts_match_ellipsoid_volumes() {
        let a = Tissue {
            t1: 1.0,
            pd: 1.0,
            center: [-0.45, 0.0, 0.0],
            semi_axes: [0.4, 0.5, 0.6],
        };
        let b = Tissue {
            t1: 2.0,
            pd: 1.0,
            center: [0.5, 0.1, 0.0],
            semi_axes: [0.35, 0.3, 0.5],
        };
        let p = make_phantom([32, 32, 32], &[a.clone(), b.clone()]).unwrap();
        for t in [&a, &b] {
            let count = p.t1_map.iter().filter(|&&v| v == t.t1).count() as f64;
            // Volume in voxels: each normalized unit spans 16 voxels.
            let expected = 4.0 / 3.0 * PI * t.semi_axes.iter().map(|s| s * 16.0).product::<f64>();
            assert!(
                (count / expected - 1.0).abs() <= 0.05,
                "{count} vs {expected}"
            );
        }
    }

    #[test]
    fn default_phantom_keeps_a_margin_and_later_tissues_win() {
        let p = make_phantom([32, 32, 32], &default_tissues()).unwrap();
        for ((x, y, z), &m) in p.support_mask.indexed_iter() {
            if [x, y, z].iter().any(|&i| i == 0 || i == 31) {
                assert!(!m);
            }
            if m {
                assert!(p.t1_map[[x, y, z]] > 0.0);
            } else {
                assert_eq!(p.t1_map[[x, y, z]], 0.0);
                assert_eq!(p.proton_density[[x, y, z]], 0.0);
            }
        }
        let centre_t1 = p.t1_map[[18, 15, 16]];
        assert_eq!(centre_t1, 4.0);
        for t1 in [0.8, 1.4, 4.0] {
            assert!(p.t1_map.iter().any(|&v| v == t1));
        }
    }

    #[test]
    fn rejects_degenerate_inputs() {
        assert!(make_phantom([4, 8, 8], &default_tissues()).is_err());
        assert!(make_phantom([8, 8, 8], &[]).is_err());
        let mut t = default_tissues();
        t[0].semi_axes[1] = 0.0;
        assert!(make_phantom([8, 8, 8], &t).is_err());
    }

    #[test]
    fn random_layouts_are_valid_and_seeded() {
        for s in 0..5 {
            let t = random_tissues(s);
            assert_eq!(t, random_tissues(s));
            let p = make_phantom([16, 16, 16], &t).unwrap();
            assert!(p.support_mask.iter().filter(|&&m| m).count() > 100);
        }
    }
}
