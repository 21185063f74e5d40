use std::collections::HashSet;
use std::fs;
use std::path::Path;

use ssmuse::forward::{make_coil_maps, make_radial_trajectory};
use ssmuse::harness::render::read_factor;
use ssmuse::harness::{
    default_tissues, make_phantom, render_outputs, run_experiment, simulate, synthesize_kspace,
    ExperimentConfig, Method, TrajectoryKind,
};
use ssmuse::io;
use ssmuse::seqsim::SequenceParams;
use ssmuse::solver::{baseline_quadratic, ReconConfig};

fn small_config(method: Method) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.method = method;
    cfg.phantom.size = [16, 16, 16];
    cfg
}

#[test]
fn noise_has_the_requested_variance_per_component() {
    let ph = make_phantom([16, 16, 16], &default_tissues()).unwrap();
    let seq = SequenceParams::desk();
    let traj = make_radial_trajectory(96, 2, 16, 16, 3)
        .unwrap()
        .stack_of_stars(16)
        .unwrap();
    let coils = make_coil_maps([16, 16, 16], 4).unwrap();
    let (clean, _) = synthesize_kspace(&ph, &seq, &traj, &coils, 0.0, 0).unwrap();
    let (noisy, _) = synthesize_kspace(&ph, &seq, &traj, &coils, 0.01, 9).unwrap();
    let n = clean.samples.len();
    assert!(n >= 100_000, "{n}");
    let diffs: Vec<_> = noisy
        .samples
        .iter()
        .zip(clean.samples.iter())
        .map(|(a, b)| a - b)
        .collect();
    for part in [
        |c: &num_complex::Complex64| c.re,
        |c: &num_complex::Complex64| c.im,
    ] {
        let vals: Vec<f64> = diffs.iter().map(part).collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        assert!((var / 1e-4 - 1.0).abs() < 0.05, "variance {var}");
    }
}

#[test]
fn accelerated_spokes_are_a_strict_subset_of_the_reference() {
    let cfg = small_config(Method::Quadratic);
    let scene = simulate(&cfg).unwrap();
    for tau in 0..scene.reference.traj.n_frames() {
        let key = |k: &[f64; 3]| (k[0].to_bits(), k[1].to_bits(), k[2].to_bits());
        let full: HashSet<_> = scene.reference.traj.frame(tau).iter().map(key).collect();
        let sub: HashSet<_> = scene.accelerated.traj.frame(tau).iter().map(key).collect();
        assert!(sub.is_subset(&full));
        assert!(sub.len() < full.len());
    }
    assert_eq!(
        scene.accelerated.traj.spokes_per_frame * 2,
        scene.reference.traj.spokes_per_frame
    );
}

#[test]
fn quadratic_smoke_run_emits_declared_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(Method::Quadratic);
    cfg.output.reference_recon = true;
    let report = run_experiment(&cfg).unwrap();
    let files = render_outputs(&report, dir.path()).unwrap();
    let names: HashSet<String> = files
        .iter()
        .map(|p| {
            p.strip_prefix(dir.path())
                .unwrap()
                .to_string_lossy()
                .into_owned()
        })
        .collect();
    for expected in [
        "metrics.csv",
        "config.toml",
        "arrays/u_quadratic.ssma",
        "arrays/t1_quadratic.ssma",
        "arrays/u_quadratic_reference.ssma",
        "arrays/kspace_accelerated.ssma",
        "arrays/trajectory_reference.ssma",
        "images/t1_truth.pgm",
        "images/t1_quadratic.pgm",
        "images/t1_quadratic.wl.txt",
        "images/t1_error_quadratic.pgm",
        "images/contrast_e000_quadratic.pgm",
    ] {
        assert!(names.contains(expected), "missing {expected}");
    }
    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("method,psnr_t1_db,mean_abs_t1_err_s,psnr_contrast_db_ti_"));
    assert!(lines[0].ends_with(",wall_seconds"));
    assert!(lines[1].starts_with("quadratic,"));
    assert!(lines[2].starts_with("quadratic_reference,"));
    assert!(lines[3].starts_with("quadratic_vs_reference,"));
    // Twice the spokes should not reconstruct worse. T1 is grid-quantized at this
    // size, so compare the contrast images.
    let full = &report
        .reference
        .as_ref()
        .unwrap()
        .1
        .metrics
        .psnr_contrast_db;
    for (f, a) in full.iter().zip(&report.primary.metrics.psnr_contrast_db) {
        assert!(f >= a, "{f} < {a}");
    }
    // The resolved config reloads to the same experiment.
    let back = ExperimentConfig::load(&dir.path().join("config.toml")).unwrap();
    assert_eq!(back, cfg);
}

fn assert_arrays_round_trip(dir: &Path) {
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "ssma") {
            let bytes = fs::read(&path).unwrap();
            let again = match io::decode(&bytes).unwrap() {
                io::AnyArray::Real(a) => io::encode_real(a.view()),
                io::AnyArray::Complex(a) => io::encode_complex(a.view()),
            };
            assert_eq!(again, bytes, "{}", path.display());
        }
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = small_config(Method::Wavelet);
    render_outputs(&run_experiment(&cfg).unwrap(), a.path()).unwrap();
    render_outputs(&run_experiment(&cfg).unwrap(), b.path()).unwrap();
    for name in [
        "metrics.csv",
        "wavelet_trace.csv",
        "images/t1_wavelet.pgm",
        "arrays/u_wavelet.ssma",
    ] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
    assert_arrays_round_trip(&a.path().join("arrays"));
    let u = read_factor(&a.path().join("arrays/u_wavelet.ssma")).unwrap();
    assert_eq!(u.shape(), [16, 16, 16]);
}

#[test]
fn noiseless_full_sampling_recovers_t1_exactly() {
    let mut cfg = small_config(Method::Quadratic);
    cfg.trajectory.kind = TrajectoryKind::Cartesian;
    cfg.acquisition.noise_sigma = 0.0;
    cfg.recon.quadratic_mu = 1e-12;
    cfg.recon.baseline_cg_max_iters = 200;
    cfg.recon.baseline_cg_tol = 1e-12;
    let report = run_experiment(&cfg).unwrap();
    let truth = &report.scene.truth.phantom;
    let est = &report.primary.t1.t1;
    for ((idx, &m), &t) in truth.support_mask.indexed_iter().zip(truth.t1_map.iter()) {
        if m {
            assert_eq!(est[idx], t, "voxel {idx:?}");
        }
    }
    assert_eq!(report.primary.metrics.mean_abs_t1_err_s, 0.0);
}

#[test]
fn quadratic_weight_trades_residual_for_norm() {
    let cfg = small_config(Method::Quadratic);
    let scene = simulate(&cfg).unwrap();
    let sub = ssmuse::harness::build_subspace(&cfg).unwrap();
    let acq = &scene.accelerated;
    let solve = |mu: f64| {
        let rc = ReconConfig {
            baseline_cg_max_iters: 300,
            baseline_cg_tol: 1e-9,
            ..ReconConfig::default()
        };
        baseline_quadratic(
            &acq.data,
            sub.basis.v.view(),
            &acq.traj,
            &scene.coils,
            mu,
            &rc,
        )
        .unwrap()
    };
    let residual = |u: &ssmuse::forward::SpatialFactor| {
        let pred =
            ssmuse::forward::subspace_forward(u, sub.basis.v.view(), &acq.traj, &scene.coils)
                .unwrap();
        pred.samples
            .iter()
            .zip(acq.data.samples.iter())
            .map(|(p, b)| (p - b).norm_sqr())
            .sum::<f64>()
    };
    let weak = solve(1e-9);
    let strong = solve(1e-3);
    assert!(residual(&strong) > residual(&weak));
    assert!(strong.norm() < weak.norm());
}
