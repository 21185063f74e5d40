//! Model checkpoint: weights as a 1D real array file plus a TOML descriptor
//! of the architecture next to it (`<stem>.arch.toml`).

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use super::{EnergyModelParams, NetworkArch};
use crate::error::{Error, Result};
use crate::io;

pub const ARCH_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Descriptor {
    format_version: u32,
    seed: u64,
    n_params: usize,
    arch: NetworkArch,
}

fn descriptor_path(weights: &Path) -> PathBuf {
    weights.with_extension("arch.toml")
}

pub fn save_checkpoint(params: &EnergyModelParams, weights_path: &Path) -> Result<()> {
    params.validate()?;
    io::write_real(
        weights_path,
        Array1::from(params.weights.clone()).into_dyn().view(),
    )?;
    let desc = Descriptor {
        format_version: ARCH_FORMAT_VERSION,
        seed: params.seed,
        n_params: params.weights.len(),
        arch: params.arch.clone(),
    };
    let text = toml::to_string(&desc).map_err(|e| Error::Format {
        path: descriptor_path(weights_path),
        message: e.to_string(),
    })?;
    let dpath = descriptor_path(weights_path);
    fs::write(&dpath, text).map_err(|e| Error::io(&dpath, e))
}

pub fn load_checkpoint(weights_path: &Path) -> Result<EnergyModelParams> {
    let dpath = descriptor_path(weights_path);
    let text = fs::read_to_string(&dpath).map_err(|e| Error::io(&dpath, e))?;
    let fmt_err = |message: String| Error::Format {
        path: dpath.clone(),
        message,
    };
    let desc: Descriptor = toml::from_str(&text).map_err(|e| fmt_err(e.to_string()))?;
    if desc.format_version != ARCH_FORMAT_VERSION {
        return Err(fmt_err(format!(
            "unsupported descriptor version {}",
            desc.format_version
        )));
    }
    let w = io::read_real(weights_path)?;
    if w.ndim() != 1 || w.len() != desc.n_params {
        return Err(Error::Format {
            path: weights_path.to_path_buf(),
            message: format!(
                "expected {} weights, found shape {:?}",
                desc.n_params,
                w.shape()
            ),
        });
    }
    let params = EnergyModelParams {
        arch: desc.arch,
        weights: w.into_raw_vec_and_offset().0,
        seed: desc.seed,
    };
    params.validate()?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::init_network;

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ssma");
        let p = init_network(&NetworkArch::default(), 7).unwrap();
        save_checkpoint(&p, &path).unwrap();
        assert!(dir.path().join("model.arch.toml").exists());
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.arch, p.arch);
        assert!(back
            .weights
            .iter()
            .zip(&p.weights)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(back.seed, 7);
    }
}
