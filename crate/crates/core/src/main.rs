use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use lincoag::cli::{self, Command, Format, RunConfig};
use lincoag::error::{Category, Error};
use lincoag::parallel::{self, Exec};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_ACCEPTANCE: u8 = 4;

#[derive(Parser)]
#[command(name = "lincoag", version, about = "Tagged-particle coagulation: profiles, kernels, resolvents and simulation")]
struct Cli {
    /// Worker threads (default: $LINCOAG_THREADS, else all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Run everything on the calling thread
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Self-similar profile Λ(ξ)
    Profile(RunArgs),
    /// Zeros of the Mellin symbol and derived constants
    Mellin(RunArgs),
    /// Boundary value problem for the limiting generator
    Kernel(RunArgs),
    /// Resolvent of the limiting generator on a grid
    Resolvent(RunArgs),
    /// Backward evolution of an observable
    Adjoint(RunArgs),
    /// Monte Carlo ensemble of tagged particles
    Simulate(RunArgs),
    /// Run acceptance checks
    Validate(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// `key = value` parameter file
    #[arg(long)]
    config: Option<PathBuf>,

    /// Re-run the command recorded in a manifest
    #[arg(long, conflicts_with = "config")]
    from_manifest: Option<PathBuf>,

    #[arg(long, short, default_value = "out")]
    output: PathBuf,

    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,

    /// Parameters as `--key value` pairs
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    params: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

fn split(cmd: Cmd) -> (Command, RunArgs) {
    match cmd {
        Cmd::Profile(a) => (Command::Profile, a),
        Cmd::Mellin(a) => (Command::Mellin, a),
        Cmd::Kernel(a) => (Command::Kernel, a),
        Cmd::Resolvent(a) => (Command::Resolvent, a),
        Cmd::Adjoint(a) => (Command::Adjoint, a),
        Cmd::Simulate(a) => (Command::Simulate, a),
        Cmd::Validate(a) => (Command::Validate, a),
    }
}

/// Run options that appear after the first `--key value` pair land in the
/// trailing list; move them back into their fields.
fn reclaim_options(args: &mut RunArgs, threads: &mut Option<usize>, sequential: &mut bool) -> Result<(), Error> {
    let mut rest = Vec::with_capacity(args.params.len());
    let mut it = std::mem::take(&mut args.params).into_iter();
    while let Some(a) = it.next() {
        let (name, inline) = match a.split_once('=') {
            Some((n, v)) if n.starts_with("--") => (n.to_string(), Some(v.to_string())),
            _ => (a.clone(), None),
        };
        if name == "--sequential" && inline.is_none() {
            *sequential = true;
            continue;
        }
        if !matches!(name.as_str(), "-o" | "--output" | "--format" | "--config" | "--from-manifest" | "--threads") {
            rest.push(a);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it.next().ok_or_else(|| Error::InvalidValue { key: name.clone(), msg: "missing value".into() })?,
        };
        match name.as_str() {
            "-o" | "--output" => args.output = PathBuf::from(value),
            "--config" => args.config = Some(PathBuf::from(value)),
            "--from-manifest" => args.from_manifest = Some(PathBuf::from(value)),
            "--threads" => {
                *threads = Some(value.parse().map_err(|_| Error::InvalidValue {
                    key: "threads".into(),
                    msg: format!("expected a positive integer, got `{value}`"),
                })?)
            }
            _ => {
                args.format = FormatArg::from_str(&value, true)
                    .map_err(|_| Error::InvalidValue { key: "format".into(), msg: format!("expected csv or json, got `{value}`") })?
            }
        }
    }
    args.params = rest;
    Ok(())
}

fn config(command: Command, args: RunArgs) -> Result<RunConfig, Error> {
    let format = match args.format {
        FormatArg::Csv => Format::Csv,
        FormatArg::Json => Format::Json,
    };
    if let Some(path) = args.from_manifest {
        let mut c = cli::config_from_manifest(&std::fs::read_to_string(path)?, args.output)?;
        if c.command != command {
            return Err(Error::Domain(format!("manifest records `{}`, not `{}`", c.command.name(), command.name())));
        }
        c.parameters.extend(cli::parse_flags(command, &args.params)?);
        cli::check(&c)?;
        return Ok(c);
    }
    let file = args.config.map(std::fs::read_to_string).transpose()?;
    cli::parse_config(command, file.as_deref(), &args.params, args.output, format)
}

fn fail(e: &Error) -> ExitCode {
    let (label, code) = match e.category() {
        Category::Domain => ("domain", EXIT_CONFIG),
        Category::Numeric => ("numeric", EXIT_NUMERIC),
        Category::Resource => ("resource", EXIT_NUMERIC),
    };
    eprintln!("error[{label}]: {e}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let args = Cli::parse();
    let (mut threads, mut sequential) = (args.threads, args.sequential);
    let (command, mut run_args) = split(args.command);
    if let Err(e) = reclaim_options(&mut run_args, &mut threads, &mut sequential) {
        return fail(&e);
    }
    if let Some(n) = threads.or_else(parallel::threads_from_env) {
        parallel::configure_threads(n);
    }
    let exec = if sequential { Exec::Sequential } else { Exec::Parallel };
    let config = match config(command, run_args) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    match cli::run(&config, exec) {
        Ok(summary) => {
            if command == Command::Validate {
                print!("{}", cli::format_checks(&summary.checks));
            }
            for o in &summary.manifest.outputs {
                eprintln!("wrote {} ({} bytes)", config.output_dir.join(&o.file).display(), o.bytes);
            }
            if summary.acceptance_failed() {
                ExitCode::from(EXIT_ACCEPTANCE)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => fail(&e),
    }
}
