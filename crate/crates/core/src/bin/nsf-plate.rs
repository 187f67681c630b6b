use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nsf_plate::cli_io::{parse_config_with, run_scenario, OUTPUT_DIR_ENV};
use nsf_plate::Error;

#[derive(Parser)]
#[command(name = "nsf-plate", version, about = "Compressible heat-conducting fluid coupled to a damped clamped plate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Local or global time evolution, as set by `mode` in the config.
    Run(Common),
    /// Eigenvalues of the linearized operator on the conserved subspace.
    Spectrum(Common),
    /// Scaled resolvent norms on rays of a sector.
    Sector(Common),
    /// Manufactured-solution convergence of the linear steppers.
    Converge(Common),
    /// Print the report of a previous run.
    Report {
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// `key=value`, applied after the config file; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn out_dir(flag: Option<PathBuf>, configured: &str) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from)).unwrap_or_else(|| PathBuf::from(configured))
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("nsf-plate: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn run(name: &str, forced_mode: Option<&str>, c: Common) -> ExitCode {
    let text = match &c.config {
        Some(p) => match std::fs::read_to_string(p) {
            Ok(t) => t,
            Err(e) => return fail(&Error::Config(format!("cannot read {}: {e}", p.display()))),
        },
        None => String::new(),
    };
    let mut overrides = Vec::new();
    if let Some(m) = forced_mode {
        overrides.push(format!("mode=\"{m}\""));
    }
    if let Some(s) = c.seed {
        overrides.push(format!("seed={s}"));
    }
    overrides.extend(c.overrides);
    let cfg = match parse_config_with(&text, &overrides) {
        Ok(cfg) => cfg,
        Err(e) => {
            let dir = out_dir(c.out, "nsf-plate-out");
            if std::fs::create_dir_all(&dir).is_ok() {
                let body = format!("nsf-plate run report\ncommand: {name}\nstatus: FAIL\nexit code: {}\nerror: {e}\n", e.exit_code());
                let _ = std::fs::write(dir.join("report.txt"), body);
            }
            return fail(&e);
        }
    };
    let dir = out_dir(c.out, &cfg.output_dir);
    let rep = run_scenario(&cfg, &dir, name);
    print!("{}", rep.render());
    if let Some(e) = &rep.error {
        eprintln!("nsf-plate: {e}");
    }
    ExitCode::from(rep.exit_code as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(c) => run("run", None, c),
        Command::Spectrum(c) => run("spectrum", Some("spectrum"), c),
        Command::Sector(c) => run("sector", Some("sector"), c),
        Command::Converge(c) => run("converge", Some("convergence"), c),
        Command::Report { out } => {
            let dir = out_dir(out, "nsf-plate-out");
            match std::fs::read_to_string(dir.join("report.txt")) {
                Ok(t) => {
                    print!("{t}");
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&Error::Config(format!("no report in {}: {e}", dir.display()))),
            }
        }
    }
}
