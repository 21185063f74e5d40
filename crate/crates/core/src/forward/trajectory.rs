use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Per-frame non-Cartesian sample coordinates in cycles/FOV.
///
/// Samples of a frame are ordered kz-plane major, then spoke, then readout
/// position. All frames carry the same number of samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    frames: Vec<Vec<[f64; 3]>>,
    pub spokes_per_frame: usize,
    pub readout_len: usize,
    pub n_kz: usize,
}

/// Golden-angle increment for radial spokes covering [0, pi).
pub const GOLDEN_ANGLE: f64 = PI * 0.618_033_988_749_894_8;

impl Trajectory {
    pub fn from_frames(
        frames: Vec<Vec<[f64; 3]>>,
        spokes_per_frame: usize,
        readout_len: usize,
        n_kz: usize,
    ) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::domain("trajectory has no frames"));
        };
        let n = first.len();
        if n == 0 {
            return Err(Error::domain("trajectory frame is empty"));
        }
        if let Some(i) = frames.iter().position(|f| f.len() != n) {
            return Err(Error::domain(format!(
                "frame {i} has {} samples, frame 0 has {n}",
                frames[i].len()
            )));
        }
        if frames.iter().flatten().flatten().any(|c| !c.is_finite()) {
            return Err(Error::domain("trajectory has non-finite coordinates"));
        }
        Ok(Trajectory {
            frames,
            spokes_per_frame,
            readout_len,
            n_kz,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn samples_per_frame(&self) -> usize {
        self.frames[0].len()
    }

    pub fn frame(&self, i: usize) -> &[[f64; 3]] {
        &self.frames[i]
    }

    pub fn frames(&self) -> &[Vec<[f64; 3]>] {
        &self.frames
    }

    /// Checks every coordinate against `[-M/2, M/2)` for the image shape.
    pub fn check_bounds(&self, shape: [usize; 3]) -> Result<()> {
        for (f, frame) in self.frames.iter().enumerate() {
            for k in frame {
                for axis in 0..3 {
                    let half = shape[axis] as f64 / 2.0;
                    if k[axis] < -half || k[axis] >= half.max(0.5) {
                        return Err(Error::domain(format!(
                            "frame {f}: coordinate {:?} outside grid bounds for shape {:?}",
                            k, shape
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Keeps the first `spokes` spokes of every frame. Only defined for
    /// single-plane (2D) trajectories.
    pub fn first_spokes(&self, spokes: usize) -> Result<Self> {
        if self.n_kz != 1 {
            return Err(Error::domain(
                "spoke subsetting requires a single-plane trajectory",
            ));
        }
        if spokes == 0 || spokes > self.spokes_per_frame {
            return Err(Error::domain(format!(
                "cannot keep {spokes} of {} spokes",
                self.spokes_per_frame
            )));
        }
        let keep = spokes * self.readout_len;
        let frames = self.frames.iter().map(|f| f[..keep].to_vec()).collect();
        Trajectory::from_frames(frames, spokes, self.readout_len, 1)
    }

    /// Replicates a single-plane trajectory over the integer kz planes
    /// `-nz/2 .. nz - nz/2` (stack-of-stars).
    pub fn stack_of_stars(&self, nz: usize) -> Result<Self> {
        if self.n_kz != 1 {
            return Err(Error::domain("trajectory is already stacked"));
        }
        if nz == 0 {
            return Err(Error::domain("need at least one kz plane"));
        }
        let frames = self
            .frames
            .iter()
            .map(|f| {
                let mut out = Vec::with_capacity(f.len() * nz);
                for p in 0..nz {
                    let kz = p as f64 - (nz / 2) as f64;
                    out.extend(f.iter().map(|k| [k[0], k[1], kz]));
                }
                out
            })
            .collect();
        Trajectory::from_frames(frames, self.spokes_per_frame, self.readout_len, nz)
    }
}

/// Angle of spoke `j` in acquisition order.
pub fn spoke_angle(j: usize, offset: f64) -> f64 {
    (offset + j as f64 * GOLDEN_ANGLE).rem_euclid(PI)
}

/// 2D golden-angle radial trajectory.
///
/// Spokes are numbered in acquisition order: block `b` visits frames
/// `0..n_frames` in turn, so frame `tau` holds spokes `j = b * n_frames + tau`
/// for `b = 0..spokes_per_frame`. Spoke `j` has angle
/// `offset + j * golden` (mod pi), where the offset is drawn from the seed.
pub fn make_radial_trajectory(
    n_frames: usize,
    spokes_per_frame: usize,
    readout_len: usize,
    grid_size: usize,
    ordering_seed: u64,
) -> Result<Trajectory> {
    if n_frames == 0 || spokes_per_frame == 0 || readout_len == 0 || grid_size == 0 {
        return Err(Error::domain("trajectory counts must all be at least 1"));
    }
    let offset = ChaCha8Rng::seed_from_u64(ordering_seed).gen::<f64>() * PI;
    let half = grid_size as f64 / 2.0;
    let dk = grid_size as f64 / readout_len as f64;
    let frames = (0..n_frames)
        .map(|tau| {
            let mut samples = Vec::with_capacity(spokes_per_frame * readout_len);
            for b in 0..spokes_per_frame {
                let theta = spoke_angle(b * n_frames + tau, offset);
                let (s, c) = theta.sin_cos();
                for i in 0..readout_len {
                    let r = -half + i as f64 * dk;
                    samples.push([r * c, r * s, 0.0]);
                }
            }
            samples
        })
        .collect();
    Trajectory::from_frames(frames, spokes_per_frame, readout_len, 1)
}

/// Every frame samples the full integer Cartesian grid of an `nx` x `ny`
/// plane, so each frame alone determines the image.
pub fn make_cartesian_trajectory(n_frames: usize, nx: usize, ny: usize) -> Result<Trajectory> {
    if n_frames == 0 || nx == 0 || ny == 0 {
        return Err(Error::domain("trajectory counts must all be at least 1"));
    }
    let mut plane = Vec::with_capacity(nx * ny);
    for iy in 0..ny {
        for ix in 0..nx {
            plane.push([
                ix as f64 - (nx / 2) as f64,
                iy as f64 - (ny / 2) as f64,
                0.0,
            ]);
        }
    }
    Trajectory::from_frames(vec![plane; n_frames], ny, nx, 1)
}
