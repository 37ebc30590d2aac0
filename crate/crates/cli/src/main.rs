//! `omnissr` command-line tool.

mod commands;
mod config;
mod selftest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use omnissr::Error;

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "omnissr", version, about = "Omnidirectional image super-resolution")]
pub struct Cli {
    /// Run configuration file (`section.key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Do not echo the resolved configuration.
    #[arg(long, short, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split a panorama into tangent-plane images plus a layout manifest.
    Project(commands::ProjectArgs),
    /// Fuse tangent-plane images listed in a manifest back into a panorama.
    Backproject(commands::BackprojectArgs),
    /// Measure projection round-trip fidelity over pre-upsampling pairs.
    Roundtrip(commands::RoundtripArgs),
    /// Apply the bicubic degradation operator.
    Degrade(commands::DegradeArgs),
    /// Super-resolve a low-resolution panorama.
    Sr(commands::SrArgs),
    /// Compare images and print a metrics CSV.
    Eval(commands::EvalArgs),
    /// Sweep the correction strengths and print a CSV.
    AblateGamma(commands::AblateArgs),
    /// Check the core invariants on small synthetic inputs.
    Selftest(commands::SelftestArgs),
    /// Serve the echo denoiser for testing external integrations.
    EchoServer(commands::EchoArgs),
}

/// Pipeline settings shared by `sr` and `ablate-gamma`; override the config file.
#[derive(Debug, Args, Clone, Default)]
pub struct PipelineFlags {
    #[arg(long)]
    scale: Option<usize>,
    #[arg(long)]
    steps: Option<u32>,
    /// identity, tv or external
    #[arg(long)]
    denoiser: Option<String>,
    /// host:port of an external denoiser
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    gamma_p: Option<f64>,
    #[arg(long)]
    gamma_e: Option<f64>,
    #[arg(long)]
    gamma_l: Option<f64>,
    /// Pre-upsampling pair `erp,tp`
    #[arg(long)]
    preup: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Tangent plane side length (default: half the output height)
    #[arg(long)]
    tp_res: Option<usize>,
    #[arg(long)]
    kernel: Option<String>,
}

impl PipelineFlags {
    pub fn apply(&self, cfg: &mut RunConfig) -> omnissr::Result<()> {
        let mut set = |k: &str, v: Option<String>| match v {
            Some(v) => cfg.set(k, &v),
            None => Ok(()),
        };
        set("pipeline.scale", self.scale.map(|v| v.to_string()))?;
        set("pipeline.steps", self.steps.map(|v| v.to_string()))?;
        set("denoiser.endpoint", self.endpoint.clone())?;
        set("denoiser.kind", self.denoiser.clone())?;
        set("gamma.p", self.gamma_p.map(|v| v.to_string()))?;
        set("gamma.e", self.gamma_e.map(|v| v.to_string()))?;
        set("gamma.l", self.gamma_l.map(|v| v.to_string()))?;
        set("pipeline.seed", self.seed.map(|v| v.to_string()))?;
        set("pipeline.tp_resolution", self.tp_res.map(|v| v.to_string()))?;
        set("resample.kernel", self.kernel.clone())?;
        if let Some(p) = &self.preup {
            let (e, t) = commands::parse_pair(p)?;
            set("resample.preup_erp", Some(e.to_string()))?;
            set("resample.preup_tp", Some(t.to_string()))?;
        }
        Ok(())
    }
}

pub mod exit {
    pub const CONFIG: u8 = 2;
    pub const IO: u8 = 3;
    pub const PROTOCOL: u8 = 4;
    pub const INVARIANT: u8 = 5;
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Config(_) | Error::Shape { .. } => exit::CONFIG,
        Error::Io { .. } | Error::Image(_) | Error::Format { .. } => exit::IO,
        Error::Protocol(_) => exit::PROTOCOL,
        _ => exit::INVARIANT,
    }
}

fn configure_threads() -> omnissr::Result<()> {
    let Ok(v) = std::env::var("OMNISR_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("OMNISR_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| {
        let cfg = match &cli.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        commands::run(cli.command, cfg, cli.quiet)
    });
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
