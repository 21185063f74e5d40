use std::time::Instant;

use ndarray::{Array3, ArrayView3};

use super::config::{ExperimentConfig, Method, TrajectoryKind};
use super::kspace::{subset_spokes, synthesize_kspace, GroundTruth};
use super::phantom::{make_phantom, random_tissues, Phantom};
use super::slices::{extract_training_slices, TrainingSlices};
use crate::energy::{
    init_network, load_checkpoint, train_score_matching, EnergyModelParams, TrainOutcome,
};
use crate::error::{Error, Result, StageContext};
use crate::forward::{
    make_cartesian_trajectory, make_coil_maps, make_radial_trajectory, CoilMaps, KSpaceData,
    SpatialFactor, Trajectory,
};
use crate::quant::{
    error_map, fit_t1_dictionary, mean_abs_error, psnr, synthesize_contrast, T1Map,
};
use crate::seqsim::{build_dictionary, compute_temporal_basis, SignalDictionary, TemporalBasis};
use crate::solver::{
    baseline_quadratic, baseline_wavelet, map_reconstruct, SolverTrace, WaveletTrace,
};

#[derive(Clone, Debug)]
pub struct Acquisition {
    pub data: KSpaceData,
    pub traj: Trajectory,
}

/// Synthetic ground truth and both sampling budgets.
#[derive(Clone, Debug)]
pub struct Scene {
    pub truth: GroundTruth,
    pub coils: CoilMaps,
    pub reference: Acquisition,
    /// Retrospective subset of `reference`; identical to it for Cartesian sampling.
    pub accelerated: Acquisition,
}

impl Scene {
    pub fn phantom(&self) -> &Phantom {
        &self.truth.phantom
    }
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<Scene> {
    let size = cfg.phantom.size;
    let phantom = make_phantom(size, &cfg.phantom.tissues)?;
    let coils = make_coil_maps(size, cfg.acquisition.n_coils)?;
    let t = cfg.sequence.n_echoes_per_block;
    let plane = match cfg.trajectory.kind {
        TrajectoryKind::Radial => make_radial_trajectory(
            t,
            cfg.trajectory.spokes,
            cfg.readout(),
            size[0].max(size[1]),
            cfg.seeds.trajectory,
        )?,
        TrajectoryKind::Cartesian => make_cartesian_trajectory(t, size[0], size[1])?,
    };
    let traj = plane.stack_of_stars(size[2])?;
    let (data, truth) = synthesize_kspace(
        &phantom,
        &cfg.sequence,
        &traj,
        &coils,
        cfg.acquisition.noise_sigma,
        cfg.seeds.noise,
    )?;
    let reference = Acquisition { data, traj };
    let accelerated = match cfg.trajectory.kind {
        TrajectoryKind::Radial => {
            let (data, traj) = subset_spokes(
                &reference.data,
                &reference.traj,
                cfg.trajectory.accelerated_spokes,
            )?;
            Acquisition { data, traj }
        }
        TrajectoryKind::Cartesian => reference.clone(),
    };
    Ok(Scene {
        truth,
        coils,
        reference,
        accelerated,
    })
}

#[derive(Clone, Debug)]
pub struct Subspace {
    pub dictionary: SignalDictionary,
    pub basis: TemporalBasis,
    /// Dictionary on the fitting grid (may hold extra atoms).
    pub fit_dictionary: SignalDictionary,
}

pub fn build_subspace(cfg: &ExperimentConfig) -> Result<Subspace> {
    let dictionary = build_dictionary(&cfg.basis_grid(), &cfg.sequence)?;
    let basis = compute_temporal_basis(&dictionary, cfg.subspace.rank)?;
    let fit_dictionary = build_dictionary(&cfg.fit_grid(), &cfg.sequence)?;
    Ok(Subspace {
        dictionary,
        basis,
        fit_dictionary,
    })
}

/// Slices from the noise-free spatial factors of random phantoms.
pub fn training_slices(cfg: &ExperimentConfig, basis: &TemporalBasis) -> Result<TrainingSlices> {
    let mut factors = Vec::with_capacity(cfg.train.n_phantoms);
    for i in 0..cfg.train.n_phantoms as u64 {
        let tissues = random_tissues(cfg.seeds.training_phantoms.wrapping_add(i));
        let ph = make_phantom(cfg.phantom.size, &tissues)?;
        factors.push(GroundTruth::new(&ph, &cfg.sequence)?.spatial_factor(basis)?);
    }
    extract_training_slices(&factors, cfg.train.snr_floor)
}

pub fn train_prior(cfg: &ExperimentConfig, basis: &TemporalBasis) -> Result<TrainOutcome> {
    let slices = training_slices(cfg, basis)?;
    let init = init_network(&cfg.train.arch, cfg.seeds.init)?;
    let mut optim = cfg.train.optim.clone();
    optim.seed = cfg.seeds.train;
    train_score_matching(&init, &slices.slices, &optim)
}

#[derive(Clone, Debug)]
pub enum MethodTrace {
    Map(SolverTrace),
    Wavelet(WaveletTrace),
    None,
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub method: Method,
    pub u: SpatialFactor,
    pub trace: MethodTrace,
    pub wall_seconds: f64,
}

pub fn reconstruct(
    cfg: &ExperimentConfig,
    method: Method,
    acq: &Acquisition,
    coils: &CoilMaps,
    basis: &TemporalBasis,
    prior: Option<&EnergyModelParams>,
) -> Result<Reconstruction> {
    let start = Instant::now();
    let v = basis.v.view();
    let rc = &cfg.recon;
    let (u, trace) = match method {
        Method::Ssmuse => {
            let params = prior
                .ok_or_else(|| Error::domain("ssmuse reconstruction needs a trained prior"))?;
            let (u, t) = map_reconstruct(&acq.data, v, &acq.traj, coils, params, rc)?;
            (u, MethodTrace::Map(t))
        }
        Method::Quadratic => (
            baseline_quadratic(&acq.data, v, &acq.traj, coils, rc.quadratic_mu, rc)?,
            MethodTrace::None,
        ),
        Method::Wavelet => {
            let (u, t) = baseline_wavelet(
                &acq.data,
                v,
                &acq.traj,
                coils,
                rc.wavelet_gamma,
                rc.wavelet_iters,
                rc,
            )?;
            (u, MethodTrace::Wavelet(t))
        }
    };
    Ok(Reconstruction {
        method,
        u,
        trace,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// One row of the metrics table.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub label: String,
    pub psnr_t1_db: f64,
    pub mean_abs_t1_err_s: f64,
    /// One entry per configured contrast frame.
    pub psnr_contrast_db: Vec<f64>,
    pub wall_seconds: f64,
}

/// Target maps against which a reconstruction is scored.
#[derive(Clone, Debug)]
pub struct ScoringTarget {
    pub t1: Array3<f64>,
    /// Magnitude images at the configured contrast frames.
    pub contrasts: Vec<Array3<f64>>,
    pub mask: Array3<bool>,
}

impl ScoringTarget {
    pub fn from_truth(truth: &GroundTruth, frames: &[usize]) -> Self {
        ScoringTarget {
            t1: truth.phantom.t1_map.clone(),
            contrasts: frames
                .iter()
                .map(|&f| truth.frame(f).mapv(f64::abs))
                .collect(),
            mask: truth.phantom.support_mask.clone(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub t1: T1Map,
    pub t1_error: Array3<f64>,
    pub contrasts: Vec<Array3<f64>>,
    pub metrics: MetricsRow,
}

pub fn contrast_magnitudes(
    u: &SpatialFactor,
    basis: &TemporalBasis,
    frames: &[usize],
) -> Result<Vec<Array3<f64>>> {
    frames
        .iter()
        .map(|&f| Ok(synthesize_contrast(u, basis, f)?.mapv(|c| c.norm())))
        .collect()
}

pub fn evaluate(
    label: &str,
    u: &SpatialFactor,
    subspace: &Subspace,
    frames: &[usize],
    target: &ScoringTarget,
    wall_seconds: f64,
) -> Result<Evaluation> {
    let mask: ArrayView3<bool> = target.mask.view();
    let t1 = fit_t1_dictionary(u, &subspace.basis, &subspace.fit_dictionary, mask)?;
    let contrasts = contrast_magnitudes(u, &subspace.basis, frames)?;
    let psnr_contrast_db = contrasts
        .iter()
        .zip(&target.contrasts)
        .map(|(est, reference)| psnr(est.view(), reference.view(), mask))
        .collect::<Result<Vec<_>>>()?;
    let metrics = MetricsRow {
        label: label.to_string(),
        psnr_t1_db: psnr(t1.t1.view(), target.t1.view(), mask)?,
        mean_abs_t1_err_s: mean_abs_error(t1.t1.view(), target.t1.view(), mask)?,
        psnr_contrast_db,
        wall_seconds,
    };
    Ok(Evaluation {
        t1_error: error_map(t1.t1.view(), target.t1.view(), mask)?,
        t1,
        contrasts,
        metrics,
    })
}

/// Everything a run produced, in memory.
#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub scene: Scene,
    pub subspace: Subspace,
    /// Trained or loaded prior (SS-MuSE runs only).
    pub prior: Option<EnergyModelParams>,
    /// Present when this run trained the prior.
    pub training: Option<TrainOutcome>,
    pub recon: Reconstruction,
    /// Accelerated reconstruction against the ground truth.
    pub primary: Evaluation,
    /// Full-budget reconstruction against the truth, and the accelerated one
    /// against it, when `output.reference_recon` is set.
    pub reference: Option<(Reconstruction, Evaluation, Evaluation)>,
    pub wall_seconds: f64,
}

impl ExperimentReport {
    pub fn metrics_rows(&self) -> Vec<&MetricsRow> {
        let mut rows = vec![&self.primary.metrics];
        if let Some((_, full, vs)) = &self.reference {
            rows.push(&full.metrics);
            rows.push(&vs.metrics);
        }
        rows
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    run_experiment_with_prior(cfg, None)
}

/// Full pipeline. A prior passed here takes precedence over `train.model`
/// and skips training.
pub fn run_experiment_with_prior(
    cfg: &ExperimentConfig,
    prior: Option<EnergyModelParams>,
) -> Result<ExperimentReport> {
    let start = Instant::now();
    cfg.validate()?;
    let subspace = build_subspace(cfg).stage("basis")?;
    let scene = simulate(cfg).stage("simulate")?;

    let mut training = None;
    let prior = match (cfg.method, prior, &cfg.train.model) {
        (Method::Ssmuse, Some(p), _) => Some(p),
        (Method::Ssmuse, None, Some(path)) => Some(load_checkpoint(path).stage("train")?),
        (Method::Ssmuse, None, None) => {
            let out = train_prior(cfg, &subspace.basis).stage("train")?;
            let p = out.params.clone();
            training = Some(out);
            Some(p)
        }
        _ => None,
    };

    let recon = reconstruct(
        cfg,
        cfg.method,
        &scene.accelerated,
        &scene.coils,
        &subspace.basis,
        prior.as_ref(),
    )
    .stage("recon")?;

    let frames = &cfg.output.contrast_frames;
    let truth_target = ScoringTarget::from_truth(&scene.truth, frames);
    let name = cfg.method.name();
    let primary = evaluate(
        name,
        &recon.u,
        &subspace,
        frames,
        &truth_target,
        recon.wall_seconds,
    )
    .stage("eval")?;

    let reference = if cfg.output.reference_recon {
        let full = reconstruct(
            cfg,
            cfg.method,
            &scene.reference,
            &scene.coils,
            &subspace.basis,
            prior.as_ref(),
        )
        .stage("recon")?;
        let full_eval = evaluate(
            &format!("{name}_reference"),
            &full.u,
            &subspace,
            frames,
            &truth_target,
            full.wall_seconds,
        )
        .stage("eval")?;
        let target = ScoringTarget {
            t1: full_eval.t1.t1.clone(),
            contrasts: full_eval.contrasts.clone(),
            mask: truth_target.mask.clone(),
        };
        let vs = evaluate(
            &format!("{name}_vs_reference"),
            &recon.u,
            &subspace,
            frames,
            &target,
            recon.wall_seconds,
        )
        .stage("eval")?;
        Some((full, full_eval, vs))
    } else {
        None
    };

    Ok(ExperimentReport {
        config: cfg.clone(),
        scene,
        subspace,
        prior,
        training,
        recon,
        primary,
        reference,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}
