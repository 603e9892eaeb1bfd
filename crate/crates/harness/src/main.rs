use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use vortexlab_harness::config::{self, PvsConfig, RearrangeConfig, ScalingConfig, SimulateConfig, StabilityConfig};
use vortexlab_harness::constants::{calibrate, FrozenConstants};
use vortexlab_harness::output::OutputDir;
use vortexlab_harness::{run, scaling, stability, HarnessError};

#[derive(Parser)]
#[command(name = "vortexlab", version, about = "Vortex confinement laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Seed recorded in the run metadata.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Provenance file with the calibration seeds; defaults to the bundled constants' provenance.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Blob-method Euler run with diagnostics.
    Simulate(Common),
    /// Point-vortex trajectory.
    Pvs(Common),
    /// Rearrangements and interaction energies of densities.
    Rearrange(Common),
    /// Stability certificates and the frozen-constant report.
    StabilityCheck(Common),
    /// ε sweep with confinement and residual fits.
    ScalingStudy(Common),
    /// Refit the frozen constants from their calibration seeds.
    Calibrate(CalibrateArgs),
}

fn threads(n: Option<usize>) -> anyhow::Result<()> {
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Calibrate(a) => {
            threads(a.threads)?;
            let provenance = match &a.config {
                Some(p) => config::load(p)?,
                None => FrozenConstants::bundled().calibration,
            };
            let out = OutputDir::create(&a.out)?;
            let frozen = calibrate(&provenance)?;
            frozen.save(&out.path("frozen_constants.json"))?;
            println!("c22 = {:e}, c24 = {:e}, K = {:e}", frozen.c22, frozen.c24, frozen.surrogate_k);
        }
        Command::Simulate(c) => {
            let (cfg, out) = setup::<SimulateConfig>(&c)?;
            let s = run::run_simulation(&cfg, &out, c.seed)?;
            println!("t = {} after {} steps, {} samples", s.t_final, s.steps, s.samples);
        }
        Command::Pvs(c) => {
            let (cfg, out) = setup::<PvsConfig>(&c)?;
            let s = run::run_pvs(&cfg, &out, c.seed)?;
            println!("t = {}, {} samples, hamiltonian drift {:e}", s.t_final, s.samples, s.hamiltonian_drift_rel);
        }
        Command::Rearrange(c) => {
            let (cfg, out) = setup::<RearrangeConfig>(&c)?;
            for r in run::run_rearrange(&cfg, &out)? {
                println!("{}: defect {:e} ± {:e}", r.name, r.log.defect, r.log.quadrature_error_bound);
            }
        }
        Command::StabilityCheck(c) => {
            let (cfg, out) = setup::<StabilityConfig>(&c)?;
            let r = stability::stability_batch(&cfg, &out)?;
            println!("{} inputs certified", r.inputs.len());
            if let Some(cr) = &r.corpus {
                println!("validation pass: {}", cr.validation.all_pass());
            }
        }
        Command::ScalingStudy(c) => {
            let (cfg, out) = setup::<ScalingConfig>(&c)?;
            let r = scaling::scaling_study(&cfg, &out, c.seed)?;
            if let Some(s) = r.max_confinement_exponent {
                println!("max confinement exponent {s}");
            }
            if let Some(f) = &r.residual_exponent {
                println!("residual exponent {} ({} points)", f.slope, f.points);
            }
            if !r.failures.is_empty() {
                return Err(HarnessError::Partial { failed: r.failures.len(), total: r.epsilons.len() }.into());
            }
        }
    }
    Ok(())
}

fn setup<T: serde::de::DeserializeOwned>(c: &Common) -> anyhow::Result<(T, OutputDir)> {
    threads(c.threads)?;
    let cfg: T = config::load(Path::new(&c.config))?;
    Ok((cfg, OutputDir::create(&c.out)?))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<HarnessError>().map_or(3, HarnessError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
