use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ssmuse::energy::{load_checkpoint, save_checkpoint};
use ssmuse::forward::make_coil_maps;
use ssmuse::harness::render::{
    self, metrics_csv, read_acquisition, read_basis, read_factor, read_phantom,
};
use ssmuse::harness::{
    build_subspace, evaluate, reconstruct, render_outputs, run_experiment, simulate, train_prior,
    ExperimentConfig, GroundTruth, Method, MethodTrace, ScoringTarget, Seeds, Subspace,
    DEFAULT_CONFIG_TOML,
};
use ssmuse::quant::fit_t1_dictionary;
use ssmuse::{io, Error, Result};

#[derive(Parser)]
#[command(
    name = "ssmuse",
    version,
    about = "Subspace MRI reconstruction with a learned energy prior"
)]
struct Cli {
    /// Experiment configuration (TOML); defaults apply to anything omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replace every seed with streams derived from this number.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Ssmuse,
    Quadratic,
    Wavelet,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Ssmuse => Method::Ssmuse,
            MethodArg::Quadratic => Method::Quadratic,
            MethodArg::Wavelet => Method::Wavelet,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Budget {
    Accelerated,
    Reference,
}

#[derive(Subcommand)]
enum Command {
    /// Phantom, coil maps and k-space for both sampling budgets.
    Simulate,
    /// Signal dictionary and temporal basis.
    Basis,
    /// Train the energy model on slices from random phantoms.
    Train,
    /// Reconstruct the spatial factor from simulated data.
    Recon {
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        #[arg(long, value_enum, default_value = "accelerated")]
        data: Budget,
        /// Trained model (defaults to `train.model`, then `<out>/model.ssma`).
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Dictionary-matched T1 map of a reconstruction.
    FitT1 {
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
    },
    /// Metrics of a reconstruction against the ground truth.
    Eval {
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
    },
    /// Full experiment: simulate, train, reconstruct, fit, score and render.
    Run {
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
    },
    /// Print the annotated default configuration.
    DefaultConfig,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seeds = Seeds::from_base(s);
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn method_or(cfg: &ExperimentConfig, m: Option<MethodArg>) -> Method {
    m.map_or(cfg.method, Method::from)
}

fn subspace_from_disk(cfg: &ExperimentConfig, arrays: &Path) -> Result<Subspace> {
    let mut sub = build_subspace(cfg)?;
    sub.basis = read_basis(arrays)?;
    Ok(sub)
}

fn execute(cli: &Cli) -> Result<()> {
    if let Command::DefaultConfig = cli.command {
        print!("{DEFAULT_CONFIG_TOML}");
        return Ok(());
    }
    let cfg = load_config(cli)?;
    cfg.validate()?;
    let out = cfg.out_dir.clone();
    let arrays = out.join("arrays");
    match &cli.command {
        Command::Simulate => {
            let scene = simulate(&cfg)?;
            render::write_phantom(&arrays, scene.phantom())?;
            render::write_coils(&arrays.join("coils.ssma"), &scene.coils)?;
            render::write_acquisition(&arrays, "reference", &scene.reference)?;
            render::write_acquisition(&arrays, "accelerated", &scene.accelerated)?;
            println!("wrote simulated data to {}", arrays.display());
        }
        Command::Basis => {
            let sub = build_subspace(&cfg)?;
            render::write_basis(&arrays, &sub.basis)?;
            io::write_real(
                &arrays.join("dictionary.ssma"),
                sub.dictionary.signals.view().into_dyn(),
            )?;
            println!(
                "rank {} basis captures {:.6} of the dictionary energy",
                sub.basis.rank(),
                sub.basis.captured_energy(sub.basis.rank())
            );
        }
        Command::Train => {
            let basis = match read_basis(&arrays) {
                Ok(b) => b,
                Err(_) => build_subspace(&cfg)?.basis,
            };
            let outcome = train_prior(&cfg, &basis)?;
            save_checkpoint(&outcome.params, &out.join("model.ssma"))?;
            std::fs::write(
                out.join("train_log.csv"),
                outcome.log_csv(cfg.output.record_wall_time),
            )
            .map_err(|e| Error::Io {
                path: out.join("train_log.csv"),
                source: e,
            })?;
            if let Some(last) = outcome.log.last() {
                println!("epoch {} mean loss {:.6e}", last.epoch, last.mean_loss);
            }
        }
        Command::Recon {
            method,
            data,
            model,
        } => {
            let method = method_or(&cfg, *method);
            let name = match data {
                Budget::Accelerated => "accelerated",
                Budget::Reference => "reference",
            };
            let acq = read_acquisition(&arrays, name, cfg.acquisition.noise_sigma)?;
            let coils = make_coil_maps(cfg.phantom.size, cfg.acquisition.n_coils)?;
            let basis = read_basis(&arrays)?;
            let prior = if method == Method::Ssmuse {
                let path = model
                    .clone()
                    .or_else(|| cfg.train.model.clone())
                    .unwrap_or_else(|| out.join("model.ssma"));
                Some(load_checkpoint(&path)?)
            } else {
                None
            };
            let rec = reconstruct(&cfg, method, &acq, &coils, &basis, prior.as_ref())?;
            render::write_factor(&arrays.join(format!("u_{}.ssma", method.name())), &rec.u)?;
            if let MethodTrace::Map(t) = &rec.trace {
                std::fs::write(out.join("trace.csv"), t.to_csv(cfg.output.record_wall_time))
                    .map_err(|e| Error::Io {
                        path: out.join("trace.csv"),
                        source: e,
                    })?;
            }
            println!(
                "{} reconstruction took {:.1} s",
                method.name(),
                rec.wall_seconds
            );
        }
        Command::FitT1 { method } => {
            let method = method_or(&cfg, *method);
            let u = read_factor(&arrays.join(format!("u_{}.ssma", method.name())))?;
            let sub = subspace_from_disk(&cfg, &arrays)?;
            let ph = read_phantom(&arrays)?;
            let map =
                fit_t1_dictionary(&u, &sub.basis, &sub.fit_dictionary, ph.support_mask.view())?;
            render::write_real_3d(&arrays.join(format!("t1_{}.ssma", method.name())), &map.t1)?;
        }
        Command::Eval { method } => {
            let method = method_or(&cfg, *method);
            let u = read_factor(&arrays.join(format!("u_{}.ssma", method.name())))?;
            let sub = subspace_from_disk(&cfg, &arrays)?;
            let ph = read_phantom(&arrays)?;
            let truth = GroundTruth::new(&ph, &cfg.sequence)?;
            let target = ScoringTarget::from_truth(&truth, &cfg.output.contrast_frames);
            let ev = evaluate(
                method.name(),
                &u,
                &sub,
                &cfg.output.contrast_frames,
                &target,
                0.0,
            )?;
            let csv = metrics_csv(&cfg, &[&ev.metrics]);
            let path = out.join(format!("metrics_{}.csv", method.name()));
            std::fs::write(&path, &csv).map_err(|e| Error::Io { path, source: e })?;
            print!("{csv}");
        }
        Command::Run { method } => {
            let mut cfg = cfg;
            cfg.method = method_or(&cfg, *method);
            let report = run_experiment(&cfg)?;
            render_outputs(&report, &out)?;
            print!("{}", metrics_csv(&cfg, &report.metrics_rows()));
        }
        Command::DefaultConfig => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
