use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches};
use lininv_cli::config::{load_config, resolve_output_root, Command, ConfigError, ConfigErrors, KEYS, OUTPUT_ROOT_ENV};
use lininv_cli::run::{execute, RunError};

fn subcommand(name: &'static str, about: &'static str) -> clap::Command {
    let mut cmd = clap::Command::new(name).about(about);
    for (key, default, help) in KEYS.iter().filter(|(k, _, _)| *k != "command") {
        let long = key.replace('_', "-");
        let mut arg = Arg::new(*key)
            .long(long.clone())
            .value_name("VALUE")
            .help(format!("{help} [default: {default}]"))
            .allow_hyphen_values(true);
        if long != *key {
            arg = arg.alias(*key);
        }
        cmd = cmd.arg(arg);
    }
    cmd
}

fn cli() -> clap::Command {
    clap::Command::new("lininv")
        .about("Analytic-continuation benchmark runs with the SVD and maximum entropy solvers")
        .subcommand_required(true)
        .arg(
            Arg::new("config")
                .long("config")
                .global(true)
                .value_name("FILE")
                .value_parser(clap::value_parser!(PathBuf))
                .help("flat key=value configuration file; flags override its values"),
        )
        .arg(
            Arg::new("output-root")
                .long("output-root")
                .global(true)
                .value_name("DIR")
                .value_parser(clap::value_parser!(PathBuf))
                .help(format!("directory that receives run directories [env: {OUTPUT_ROOT_ENV}] [default: runs]")),
        )
        .arg(
            Arg::new("force")
                .long("force")
                .global(true)
                .action(ArgAction::SetTrue)
                .help("overwrite an existing run directory"),
        )
        .arg(
            Arg::new("workers")
                .long("workers")
                .global(true)
                .value_name("N")
                .value_parser(clap::value_parser!(usize))
                .help("worker threads for sweep and resolution cells [default: available parallelism]"),
        )
        .subcommand(subcommand("generate", "write the benchmark data and true object"))
        .subcommand(subcommand("solve", "reconstruct the object with one solver"))
        .subcommand(subcommand("sweep", "solve over a list of cut-offs or entropy weights"))
        .subcommand(subcommand("resolution", "smallest resolvable delta-pair gap per inverse temperature"))
}

fn flag_pairs(m: &ArgMatches) -> Vec<(String, String)> {
    KEYS.iter()
        .filter(|(k, _, _)| *k != "command")
        .filter_map(|(k, _, _)| m.get_one::<String>(k).map(|v| (k.to_string(), v.clone())))
        .collect()
}

fn run() -> Result<PathBuf, RunError> {
    let matches = cli().get_matches();
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let command = Command::parse(name).expect("subcommands match Command");
    let file = match sub.get_one::<PathBuf>("config") {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                RunError::Config(ConfigErrors(vec![ConfigError::Inconsistent(format!(
                    "cannot read config file {}: {e}",
                    path.display()
                ))]))
            })?;
            Some((text, path.display().to_string()))
        }
        None => None,
    };
    let cfg = load_config(
        command,
        file.as_ref().map(|(t, o)| (t.as_str(), o.as_str())),
        &flag_pairs(sub),
    )?;
    let root = resolve_output_root(sub.get_one::<PathBuf>("output-root").cloned(), std::env::var(OUTPUT_ROOT_ENV).ok());
    let workers = sub.get_one::<usize>("workers").copied().unwrap_or(0);
    execute(&cfg, &root, sub.get_flag("force"), workers)
}

fn main() -> ExitCode {
    match run() {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
