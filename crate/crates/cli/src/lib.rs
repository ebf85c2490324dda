//! Command-line front end: argument parsing, config resolution and dispatch.

mod commands;
mod error;
pub mod registry;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Arg, ArgAction, Command};

pub use error::CliError;
use registry::{Cmd, KEYS};

pub fn command() -> Command {
    let mut root = Command::new("adamore")
        .about("Unsupervised graph mixture of residual experts: training, embedding and evaluation")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true);
    for cmd in Cmd::ALL {
        let mut sub = Command::new(cmd.name()).about(cmd.about()).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .value_parser(clap::value_parser!(PathBuf))
                .help("key = value settings file; flags override it"),
        );
        if cmd != Cmd::PrintConfig {
            for key in KEYS.iter().filter(|k| k.used_by(cmd)) {
                sub = sub.arg(
                    Arg::new(key.name)
                        .long(key.flag())
                        .value_name("VALUE")
                        .action(ArgAction::Set)
                        .help(key.help),
                );
            }
        }
        root = root.subcommand(sub);
    }
    root
}

/// Runs one invocation and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let cmd = Cmd::ALL.into_iter().find(|c| c.name() == name).expect("registered subcommand");
    let outcome = (|| {
        let file = match sub.get_one::<PathBuf>("config") {
            Some(p) => registry::parse_config_file(p)?,
            None => Vec::new(),
        };
        let flags: Vec<(String, String)> = KEYS
            .iter()
            .filter(|k| cmd != Cmd::PrintConfig && k.used_by(cmd))
            .filter_map(|k| sub.get_one::<String>(k.name).map(|v| (k.name.to_string(), v.clone())))
            .collect();
        let (settings, sources) = registry::resolve(&file, &flags)?;
        commands::dispatch(cmd, settings, &sources)
    })();
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
