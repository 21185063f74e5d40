use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::phantom::{default_tissues, Tissue};
use crate::energy::{NetworkArch, TrainConfig};
use crate::error::{Error, Result};
use crate::seqsim::{log_grid, SequenceParams};
use crate::solver::ReconConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ssmuse,
    Quadratic,
    Wavelet,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Ssmuse => "ssmuse",
            Method::Quadratic => "quadratic",
            Method::Wavelet => "wavelet",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ssmuse" => Ok(Method::Ssmuse),
            "quadratic" => Ok(Method::Quadratic),
            "wavelet" => Ok(Method::Wavelet),
            other => Err(Error::Config(format!(
                "unknown method `{other}` (expected ssmuse, quadratic or wavelet)"
            ))),
        }
    }
}

/// Named seeds for every random stream in a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub trajectory: u64,
    pub noise: u64,
    pub init: u64,
    pub train: u64,
    pub training_phantoms: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds::from_base(0)
    }
}

impl Seeds {
    /// Distinct streams derived from a single number.
    pub fn from_base(base: u64) -> Self {
        let k = base.wrapping_mul(1000);
        Seeds {
            trajectory: k + 1,
            noise: k + 2,
            init: k + 3,
            train: k + 4,
            training_phantoms: k + 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub size: [usize; 3],
    pub tissues: Vec<Tissue>,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            size: [32, 32, 32],
            tissues: default_tissues(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryKind {
    /// Golden-angle stack of stars.
    Radial,
    /// Fully sampled Cartesian planes in every frame.
    Cartesian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    /// Spokes per frame in every kz plane of the reference acquisition.
    pub spokes: usize,
    /// Spokes per frame kept for the accelerated acquisition.
    pub accelerated_spokes: usize,
    /// Samples per spoke; 0 uses the in-plane matrix size.
    pub readout: usize,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        TrajectorySpec {
            kind: TrajectoryKind::Radial,
            spokes: 2,
            accelerated_spokes: 1,
            readout: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquisitionSpec {
    pub n_coils: usize,
    /// Standard deviation of the real and of the imaginary noise part.
    pub noise_sigma: f64,
}

impl Default for AcquisitionSpec {
    fn default() -> Self {
        AcquisitionSpec {
            n_coils: 4,
            noise_sigma: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubspaceSpec {
    pub rank: usize,
    pub t1_min: f64,
    pub t1_max: f64,
    /// Atoms in the log-spaced dictionary used for the basis and the fit.
    pub n_atoms: usize,
    /// Add the phantom tissue T1 values to the fitting grid.
    pub fit_includes_tissue_t1: bool,
}

impl Default for SubspaceSpec {
    fn default() -> Self {
        SubspaceSpec {
            rank: 4,
            t1_min: 0.1,
            t1_max: 5.0,
            n_atoms: 100,
            fit_includes_tissue_t1: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    /// Pretrained weights; when set, training is skipped.
    pub model: Option<PathBuf>,
    /// Random phantoms whose true spatial factors supply training slices.
    pub n_phantoms: usize,
    pub snr_floor: f64,
    pub arch: NetworkArch,
    pub optim: TrainConfig,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            model: None,
            n_phantoms: 2,
            snr_floor: 0.05,
            arch: NetworkArch::default(),
            optim: TrainConfig {
                epochs: 10,
                learning_rate: 1e-3,
                batch_size: 8,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    /// Echo indices (0-based) at which contrast images are synthesized and scored.
    pub contrast_frames: Vec<usize>,
    /// Also reconstruct the full-spoke data and score against it.
    pub reference_recon: bool,
    /// Put measured wall time in the metrics file (otherwise `NA`, which keeps
    /// the file reproducible byte for byte).
    pub record_wall_time: bool,
    /// Write arrays, images and traces besides the metrics.
    pub artifacts: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            contrast_frames: vec![0, 10, 30, 95],
            reference_recon: false,
            record_wall_time: false,
            artifacts: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub out_dir: PathBuf,
    pub method: Method,
    pub seeds: Seeds,
    pub phantom: PhantomSpec,
    pub sequence: SequenceParams,
    pub trajectory: TrajectorySpec,
    pub acquisition: AcquisitionSpec,
    pub subspace: SubspaceSpec,
    pub recon: ReconConfig,
    pub train: TrainSpec,
    pub output: OutputSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            out_dir: PathBuf::from("out"),
            method: Method::Ssmuse,
            seeds: Seeds::default(),
            phantom: PhantomSpec::default(),
            sequence: SequenceParams::desk(),
            trajectory: TrajectorySpec::default(),
            acquisition: AcquisitionSpec::default(),
            subspace: SubspaceSpec::default(),
            recon: ReconConfig::default(),
            train: TrainSpec::default(),
            output: OutputSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExperimentConfig::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn readout(&self) -> usize {
        if self.trajectory.readout == 0 {
            self.phantom.size[0].max(self.phantom.size[1])
        } else {
            self.trajectory.readout
        }
    }

    /// Log-spaced grid for the dictionary behind the temporal basis.
    pub fn basis_grid(&self) -> Vec<f64> {
        log_grid(
            self.subspace.t1_min,
            self.subspace.t1_max,
            self.subspace.n_atoms,
        )
    }

    /// Grid for T1 matching: the basis grid plus, optionally, the tissue values.
    pub fn fit_grid(&self) -> Vec<f64> {
        let mut g = self.basis_grid();
        if self.subspace.fit_includes_tissue_t1 {
            g.extend(self.phantom.tissues.iter().map(|t| t.t1));
        }
        g.sort_by(f64::total_cmp);
        g.dedup();
        g
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.phantom.size.iter().any(|&n| n < 8) {
            return bad(format!(
                "phantom.size must be >= 8 per axis, got {:?}",
                self.phantom.size
            ));
        }
        if self.phantom.tissues.is_empty() {
            return bad("phantom.tissues must not be empty".into());
        }
        self.sequence
            .validate()
            .map_err(|e| Error::Config(format!("sequence: {e}")))?;
        let t = &self.trajectory;
        if t.kind == TrajectoryKind::Radial
            && (t.spokes == 0 || t.accelerated_spokes == 0 || t.accelerated_spokes >= t.spokes)
        {
            return bad(format!(
                "trajectory needs 0 < accelerated_spokes < spokes, got {} and {}",
                t.accelerated_spokes, t.spokes
            ));
        }
        if self.acquisition.n_coils == 0 {
            return bad("acquisition.n_coils must be at least 1".into());
        }
        if !(self.acquisition.noise_sigma >= 0.0 && self.acquisition.noise_sigma.is_finite()) {
            return bad("acquisition.noise_sigma must be >= 0".into());
        }
        let s = &self.subspace;
        if !(s.t1_min > 0.0 && s.t1_min < s.t1_max && s.t1_max.is_finite()) || s.n_atoms < 2 {
            return bad("subspace needs 0 < t1_min < t1_max and n_atoms >= 2".into());
        }
        if s.rank == 0 || s.rank > s.n_atoms.min(self.sequence.n_echoes_per_block) {
            return bad(format!("subspace.rank {} out of range", s.rank));
        }
        self.recon.validate()?;
        self.train.optim.validate()?;
        self.train
            .arch
            .validate()
            .map_err(|e| Error::Config(format!("train.arch: {e}")))?;
        if !(self.train.snr_floor >= 0.0 && self.train.snr_floor.is_finite()) {
            return bad("train.snr_floor must be >= 0".into());
        }
        if self.train.model.is_none() && self.train.n_phantoms == 0 {
            return bad("train.n_phantoms must be positive when no model is given".into());
        }
        if let Some(&f) = self
            .output
            .contrast_frames
            .iter()
            .find(|&&f| f >= self.sequence.n_echoes_per_block)
        {
            return bad(format!("contrast frame {f} exceeds the echo train"));
        }
        Ok(())
    }
}

/// Annotated default configuration, as printed by `ssmuse default-config`.
pub const DEFAULT_CONFIG_TOML: &str = include_str!("default_config.toml");
