use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use vvda::experiments::{exit_code, execute, merge_settings, Command, ExperimentSpec};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Cmd {
    Convergence,
    Decay,
    Stability,
    Twin,
}

/// Velocity-vorticity Navier-Stokes with continuous data assimilation.
#[derive(Parser, Debug)]
#[command(name = "vvda", version)]
struct Cli {
    #[arg(value_enum)]
    command: Cmd,
    /// key=value file; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// be | bdf2
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long)]
    dt: Option<f64>,
    /// Final time.
    #[arg(long = "T")]
    final_time: Option<f64>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    mu1: Option<f64>,
    /// Defaults to mu1.
    #[arg(long)]
    mu2: Option<f64>,
    /// Mesh ladder length (n = 4, 8, ...).
    #[arg(long, conflicts_with = "h")]
    levels: Option<usize>,
    /// Cell side length of a single mesh.
    #[arg(long)]
    h: Option<f64>,
    /// periodic | manufactured
    #[arg(long)]
    bc: Option<String>,
    /// Comma-separated mu1 values; mu2 follows each unless --mu2 is set.
    #[arg(long = "mu-list")]
    mu_list: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record every k-th step.
    #[arg(long)]
    stride: Option<usize>,
    /// manufactured | zero
    #[arg(long)]
    forcing: Option<String>,
    /// Existing twin trajectory to assimilate.
    #[arg(long = "twin-file")]
    twin_file: Option<PathBuf>,
}

impl Cli {
    fn flags(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                m.insert(k.to_string(), v);
            }
        };
        put("scheme", self.scheme.clone());
        put("dt", self.dt.map(|x| x.to_string()));
        put("T", self.final_time.map(|x| x.to_string()));
        put("nu", self.nu.map(|x| x.to_string()));
        put("mu1", self.mu1.map(|x| x.to_string()));
        put("mu2", self.mu2.map(|x| x.to_string()));
        put("levels", self.levels.map(|x| x.to_string()));
        put("h", self.h.map(|x| x.to_string()));
        put("bc", self.bc.clone());
        put("mu-list", self.mu_list.clone());
        put("out", self.out.as_ref().map(|p| p.display().to_string()));
        put("stride", self.stride.map(|x| x.to_string()));
        put("forcing", self.forcing.clone());
        put("twin-file", self.twin_file.as_ref().map(|p| p.display().to_string()));
        m
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = match cli.command {
        Cmd::Convergence => Command::Convergence,
        Cmd::Decay => Command::Decay,
        Cmd::Stability => Command::Stability,
        Cmd::Twin => Command::Twin,
    };
    let result = merge_settings(cli.config.as_deref(), cli.flags())
        .and_then(|m| ExperimentSpec::from_map(command, &m))
        .and_then(|spec| execute(&spec));
    match result {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("vvda: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
