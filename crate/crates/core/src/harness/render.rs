use std::fs;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};
use ndarray::{s, Array1, Array2, Array3, Array4, Array5, ArrayView3};
use num_complex::Complex64;

use super::config::ExperimentConfig;
use super::experiment::{Acquisition, Evaluation, ExperimentReport, MethodTrace, MetricsRow};
use super::phantom::Phantom;
use crate::energy::save_checkpoint;
use crate::error::{Error, Result};
use crate::forward::{CoilMaps, KSpaceData, SpatialFactor, Trajectory};
use crate::io;
use crate::seqsim::TemporalBasis;

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Display window of a grayscale image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Window {
    pub min: f64,
    pub max: f64,
}

impl Window {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let (min, max) = values
            .into_iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            });
        if min.is_finite() {
            Window { min, max }
        } else {
            Window { min: 0.0, max: 0.0 }
        }
    }

    fn level(&self, v: f64) -> u8 {
        if self.max <= self.min {
            return 0;
        }
        (255.0 * ((v - self.min) / (self.max - self.min)).clamp(0.0, 1.0)).round() as u8
    }
}

/// Binary PGM of a 2D image (rows = first axis) plus a `<name>.wl.txt`
/// sidecar recording the window.
pub fn write_pgm(path: &Path, image: &Array2<f64>, window: Window) -> Result<()> {
    let (h, w) = image.dim();
    let pixels: Vec<u8> = image.iter().map(|&v| window.level(v)).collect();
    let mut buf = Vec::new();
    PnmEncoder::new(&mut buf)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(&pixels, w as u32, h as u32, ExtendedColorType::L8)
        .map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))?;
    let sidecar = path.with_extension("wl.txt");
    write_text(
        &sidecar,
        &format!(
            "window_min = {:e}\nwindow_max = {:e}\nwindow_center = {:e}\nwindow_width = {:e}\n",
            window.min,
            window.max,
            0.5 * (window.min + window.max),
            window.max - window.min
        ),
    )
}

/// Central axial slice (fixed third index), displayed with y down the rows.
pub fn central_slice(vol: ArrayView3<f64>) -> Array2<f64> {
    let z = vol.shape()[2] / 2;
    vol.slice(s![.., .., z]).t().to_owned()
}

/// Header of the metrics table for the given contrast echo times (seconds).
pub fn metrics_header(echo_times: &[f64]) -> String {
    let mut h = String::from("method,psnr_t1_db,mean_abs_t1_err_s");
    for t in echo_times {
        h.push_str(&format!(",psnr_contrast_db_ti_{:.1}ms", t * 1e3));
    }
    h.push_str(",wall_seconds\n");
    h
}

pub fn metrics_line(row: &MetricsRow, with_time: bool) -> String {
    let mut l = format!(
        "{},{:.6},{:.6}",
        row.label, row.psnr_t1_db, row.mean_abs_t1_err_s
    );
    for p in &row.psnr_contrast_db {
        l.push_str(&format!(",{p:.6}"));
    }
    if with_time {
        l.push_str(&format!(",{:.3}\n", row.wall_seconds));
    } else {
        l.push_str(",NA\n");
    }
    l
}

pub fn metrics_csv(cfg: &ExperimentConfig, rows: &[&MetricsRow]) -> String {
    let te = cfg.sequence.echo_times();
    let times: Vec<f64> = cfg.output.contrast_frames.iter().map(|&f| te[f]).collect();
    let mut out = metrics_header(&times);
    for r in rows {
        out.push_str(&metrics_line(r, cfg.output.record_wall_time));
    }
    out
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    let shape = (
        traj.n_frames(),
        traj.n_kz,
        traj.spokes_per_frame,
        traj.readout_len,
        3,
    );
    let flat: Vec<f64> = traj.frames().iter().flatten().flatten().copied().collect();
    let a = Array5::from_shape_vec(shape, flat).map_err(|e| Error::domain(e.to_string()))?;
    io::write_real(path, a.into_dyn().view())
}

/// Inverse of [`write_trajectory`]: shape `(frames, kz planes, spokes, readout, 3)`.
pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let a = io::read_real(path)?;
    let fmt = |m: &str| Error::Format {
        path: path.to_path_buf(),
        message: m.to_string(),
    };
    if a.ndim() != 5 || a.shape()[4] != 3 {
        return Err(fmt(
            "trajectory array must have shape (frames, planes, spokes, readout, 3)",
        ));
    }
    let sh = a.shape().to_vec();
    let per_frame = sh[1] * sh[2] * sh[3];
    let a = a.as_standard_layout();
    let data = a.as_slice().expect("standard layout");
    let frames = (0..sh[0])
        .map(|f| {
            (0..per_frame)
                .map(|i| {
                    let o = 3 * (f * per_frame + i);
                    [data[o], data[o + 1], data[o + 2]]
                })
                .collect()
        })
        .collect();
    Trajectory::from_frames(frames, sh[2], sh[3], sh[1])
}

pub fn write_acquisition(dir: &Path, name: &str, acq: &Acquisition) -> Result<()> {
    io::write_complex(
        &dir.join(format!("kspace_{name}.ssma")),
        acq.data.samples.view().into_dyn(),
    )?;
    write_trajectory(&dir.join(format!("trajectory_{name}.ssma")), &acq.traj)
}

pub fn read_acquisition(dir: &Path, name: &str, noise_sigma: f64) -> Result<Acquisition> {
    let path = dir.join(format!("kspace_{name}.ssma"));
    let samples = io::read_complex(&path)?
        .into_dimensionality()
        .map_err(|e| Error::Format {
            path: path.clone(),
            message: e.to_string(),
        })?;
    let traj = read_trajectory(&dir.join(format!("trajectory_{name}.ssma")))?;
    Ok(Acquisition {
        data: KSpaceData {
            samples,
            noise_sigma,
        },
        traj,
    })
}

pub fn write_phantom(dir: &Path, ph: &Phantom) -> Result<()> {
    io::write_real(&dir.join("phantom_t1.ssma"), ph.t1_map.view().into_dyn())?;
    io::write_real(
        &dir.join("phantom_pd.ssma"),
        ph.proton_density.view().into_dyn(),
    )?;
    let mask = ph.support_mask.mapv(|m| if m { 1.0 } else { 0.0 });
    io::write_real(&dir.join("phantom_mask.ssma"), mask.view().into_dyn())
}

fn read_3d(path: &Path) -> Result<Array3<f64>> {
    io::read_real(path)?
        .into_dimensionality()
        .map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

pub fn read_phantom(dir: &Path) -> Result<Phantom> {
    Ok(Phantom {
        t1_map: read_3d(&dir.join("phantom_t1.ssma"))?,
        proton_density: read_3d(&dir.join("phantom_pd.ssma"))?,
        support_mask: read_3d(&dir.join("phantom_mask.ssma"))?.mapv(|v| v != 0.0),
    })
}

pub fn write_basis(dir: &Path, basis: &TemporalBasis) -> Result<()> {
    io::write_real(&dir.join("basis.ssma"), basis.v.view().into_dyn())?;
    let sv = Array1::from(basis.singular_values.clone());
    io::write_real(
        &dir.join("basis_singular_values.ssma"),
        sv.view().into_dyn(),
    )
}

pub fn read_basis(dir: &Path) -> Result<TemporalBasis> {
    let path = dir.join("basis.ssma");
    let v: Array2<f64> =
        io::read_real(&path)?
            .into_dimensionality()
            .map_err(|e| Error::Format {
                path: path.clone(),
                message: e.to_string(),
            })?;
    let singular_values = io::read_real(&dir.join("basis_singular_values.ssma"))?
        .iter()
        .copied()
        .collect();
    Ok(TemporalBasis { v, singular_values })
}

pub fn write_factor(path: &Path, u: &SpatialFactor) -> Result<()> {
    io::write_complex(path, u.0.view().into_dyn())
}

pub fn read_factor(path: &Path) -> Result<SpatialFactor> {
    let a: Array4<Complex64> =
        io::read_complex(path)?
            .into_dimensionality()
            .map_err(|e| Error::Format {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
    Ok(SpatialFactor(a))
}

pub fn write_coils(path: &Path, coils: &CoilMaps) -> Result<()> {
    io::write_complex(path, coils.maps.view().into_dyn())
}

pub fn write_real_3d(path: &Path, a: &Array3<f64>) -> Result<()> {
    io::write_real(path, a.view().into_dyn())
}

pub fn read_real_3d(path: &Path) -> Result<Array3<f64>> {
    read_3d(path)
}

/// PGM panels of one evaluation: T1 map, T1 error and contrast magnitudes.
fn render_evaluation(
    dir: &Path,
    eval: &Evaluation,
    t1_window: Window,
    contrast_windows: &[Window],
    frames: &[usize],
) -> Result<()> {
    let label = &eval.metrics.label;
    write_pgm(
        &dir.join(format!("t1_{label}.pgm")),
        &central_slice(eval.t1.t1.view()),
        t1_window,
    )?;
    let err = central_slice(eval.t1_error.view());
    write_pgm(
        &dir.join(format!("t1_error_{label}.pgm")),
        &err,
        Window::of(err.iter().copied()).with_min(0.0),
    )?;
    for ((img, w), f) in eval.contrasts.iter().zip(contrast_windows).zip(frames) {
        write_pgm(
            &dir.join(format!("contrast_e{f:03}_{label}.pgm")),
            &central_slice(img.view()),
            *w,
        )?;
    }
    Ok(())
}

impl Window {
    fn with_min(self, min: f64) -> Self {
        Window {
            min,
            max: self.max.max(min),
        }
    }
}

/// Writes `metrics.csv`, the resolved `config.toml` and, unless disabled,
/// arrays, images, traces and the trained model. Returns the written paths.
pub fn render_outputs(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let cfg = &report.config;
    let with_time = cfg.output.record_wall_time;
    write_text(
        &dir.join("metrics.csv"),
        &metrics_csv(cfg, &report.metrics_rows()),
    )?;
    write_text(&dir.join("config.toml"), &cfg.to_toml())?;
    if cfg.output.artifacts {
        let arrays = dir.join("arrays");
        let scene = &report.scene;
        write_phantom(&arrays, scene.phantom())?;
        write_basis(&arrays, &report.subspace.basis)?;
        io::write_real(
            &arrays.join("dictionary.ssma"),
            report.subspace.dictionary.signals.view().into_dyn(),
        )?;
        write_coils(&arrays.join("coils.ssma"), &scene.coils)?;
        write_acquisition(&arrays, "reference", &scene.reference)?;
        write_acquisition(&arrays, "accelerated", &scene.accelerated)?;
        write_factor(
            &arrays.join("u_truth.ssma"),
            &scene.truth.spatial_factor(&report.subspace.basis)?,
        )?;
        let mut evals = vec![(&report.recon.u, &report.primary)];
        if let Some((full, full_eval, _)) = &report.reference {
            evals.push((&full.u, full_eval));
        }
        for (u, e) in &evals {
            let label = &e.metrics.label;
            write_factor(&arrays.join(format!("u_{label}.ssma")), u)?;
            write_real_3d(&arrays.join(format!("t1_{label}.ssma")), &e.t1.t1)?;
        }

        match &report.recon.trace {
            MethodTrace::Map(t) => write_text(&dir.join("trace.csv"), &t.to_csv(with_time))?,
            MethodTrace::Wavelet(t) => {
                let mut csv = String::from("iteration,objective\n");
                for (i, o) in t.objective.iter().enumerate() {
                    csv.push_str(&format!("{i},{o:.12e}\n"));
                }
                write_text(&dir.join("wavelet_trace.csv"), &csv)?;
            }
            MethodTrace::None => {}
        }
        if let Some(tr) = &report.training {
            write_text(&dir.join("train_log.csv"), &tr.log_csv(with_time))?;
            save_checkpoint(&tr.params, &dir.join("model.ssma"))?;
        }

        let images = dir.join("images");
        let frames = &cfg.output.contrast_frames;
        let truth = &scene.truth;
        let mask = &truth.phantom.support_mask;
        let t1_window = Window::of(truth.phantom.t1_map.iter().copied()).with_min(0.0);
        write_pgm(
            &images.join("t1_truth.pgm"),
            &central_slice(truth.phantom.t1_map.view()),
            t1_window,
        )?;
        let mut contrast_windows = Vec::new();
        for &f in frames {
            let img = truth.frame(f).mapv(f64::abs);
            let w = Window::of(img.iter().zip(mask).filter(|p| *p.1).map(|p| *p.0)).with_min(0.0);
            write_pgm(
                &images.join(format!("contrast_e{f:03}_truth.pgm")),
                &central_slice(img.view()),
                w,
            )?;
            contrast_windows.push(w);
        }
        for (_, e) in &evals {
            render_evaluation(&images, e, t1_window, &contrast_windows, frames)?;
        }
    }
    let mut written = Vec::new();
    collect_files(dir, &mut written)?;
    written.sort();
    Ok(written)
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_is_uniform() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.pgm");
        let img = Array2::from_elem((5, 7), 2.5);
        write_pgm(&p, &img, Window::of(img.iter().copied())).unwrap();
        let bytes = fs::read(&p).unwrap();
        let header = b"P5\n7 5 255\n";
        assert!(bytes.starts_with(header), "{:?}", &bytes[..12]);
        let body = &bytes[header.len()..];
        assert_eq!(body.len(), 35);
        assert!(body.iter().all(|&b| b == body[0]));
    }

    #[test]
    fn sidecar_records_window_and_levels_span_it() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t1.pgm");
        let img = Array2::from_shape_fn((2, 2), |(i, j)| (2 * i + j) as f64);
        let w = Window::of(img.iter().copied());
        assert_eq!(w, Window { min: 0.0, max: 3.0 });
        write_pgm(&p, &img, w).unwrap();
        let side = fs::read_to_string(dir.path().join("t1.wl.txt")).unwrap();
        assert!(side.contains("window_min = 0e0"), "{side}");
        assert!(side.contains("window_max = 3e0"), "{side}");
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[bytes.len() - 4..], &[0, 85, 170, 255]);
    }

    #[test]
    fn trajectory_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.ssma");
        let t = crate::forward::make_radial_trajectory(3, 2, 8, 8, 4)
            .unwrap()
            .stack_of_stars(4)
            .unwrap();
        write_trajectory(&p, &t).unwrap();
        assert_eq!(read_trajectory(&p).unwrap(), t);
    }

    #[test]
    fn metrics_formatting_is_fixed() {
        let row = MetricsRow {
            label: "quadratic".into(),
            psnr_t1_db: 21.123456789,
            mean_abs_t1_err_s: 0.25,
            psnr_contrast_db: vec![30.0, 1.0 / 3.0],
            wall_seconds: 12.3456,
        };
        assert_eq!(metrics_header(&[0.0195, 0.2]), "method,psnr_t1_db,mean_abs_t1_err_s,psnr_contrast_db_ti_19.5ms,psnr_contrast_db_ti_200.0ms,wall_seconds\n");
        assert_eq!(
            metrics_line(&row, false),
            "quadratic,21.123457,0.250000,30.000000,0.333333,NA\n"
        );
        assert_eq!(
            metrics_line(&row, true),
            "quadratic,21.123457,0.250000,30.000000,0.333333,12.346\n"
        );
    }
}
