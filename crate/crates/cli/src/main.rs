//! `sentvec` command-line tool.
//!
//! Exit status: 0 success, 1 usage error, 2 data error (bad or missing
//! input), 3 internal error.

mod args;
mod commands;
mod config;
mod manifest;

use std::ffi::OsString;
use std::process::ExitCode;

use clap::Parser;

use crate::args::Cli;
use crate::config::UsageError;

const USAGE: u8 = 1;
const DATA: u8 = 2;
const INTERNAL: u8 = 3;

fn classify(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return USAGE;
        }
        if let Some(e) = cause.downcast_ref::<sentvec::Error>() {
            return if e.is_data_error() { DATA } else { USAGE };
        }
        if cause.is::<std::io::Error>() {
            return DATA;
        }
    }
    INTERNAL
}

/// The error and its causes, skipping causes already quoted by their parent.
fn report(err: &anyhow::Error) {
    let mut msg = String::new();
    let mut prev = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !prev.contains(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
        prev = text;
    }
    eprintln!("error: {msg}");
}

fn run(argv: Vec<OsString>) -> u8 {
    let argv = match config::inject(argv) {
        Ok(a) => a,
        Err(e) => {
            report(&e);
            return classify(&e);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { USAGE } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match commands::dispatch(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            report(&e);
            classify(&e)
        }
    }
}

fn main() -> ExitCode {
    let argv: Vec<OsString> = std::env::args_os().collect();
    match std::panic::catch_unwind(|| run(argv)) {
        Ok(code) => ExitCode::from(code),
        Err(_) => ExitCode::from(INTERNAL),
    }
}
