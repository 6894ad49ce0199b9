//! `cner <subcommand> [--config PATH] [--key value ...]`

mod commands;
mod config;

use std::io::Write;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{Command, Failure};
use config::{parse_config_text, parse_overrides, RunConfig, UsageError};

#[derive(Parser)]
#[command(
    name = "cner",
    version,
    about = "Clinical NER with contextual character and word embeddings",
    after_help = "Settings come from defaults, then --config FILE (`key = value` lines), then --key value flags.\n\
                  Run `cner <subcommand> --help` to list the accepted keys."
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Args)]
#[command(disable_help_flag = true)]
struct Rest {
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    args: Vec<String>,
}

#[derive(Subcommand)]
enum Sub {
    /// Pretrain the character-level bidirectional language model
    PretrainChar(Rest),
    /// Pretrain the word-level bidirectional language model
    PretrainWord(Rest),
    /// Train the BiLSTM-CRF tagger over an embedder stack
    Train(Rest),
    /// Tag a BIO or plain-text file
    Predict(Rest),
    /// Span-level precision, recall and F1
    Eval(Rest),
    /// Export per-token vectors
    Embed(Rest),
    /// Sentence, token and entity counts
    Stats(Rest),
}

fn help_text(cmd: Command) -> String {
    let mut out = format!("Usage: cner {} [--config PATH] [--key value ...]\n\nKeys:\n", cmd.name());
    for k in cmd.schema() {
        let default = match &k.default {
            Some(d) if d.is_empty() => "(empty)".to_string(),
            Some(d) => d.clone(),
            None => "(required)".to_string(),
        };
        out.push_str(&format!("  --{:<18} {} [{}]\n", k.name, k.help, default));
    }
    out
}

fn resolve(cmd: Command, args: &[String]) -> Result<RunConfig, UsageError> {
    let (config_path, overrides) = parse_overrides(args)?;
    let file = match config_path {
        Some(p) => {
            let text = std::fs::read_to_string(&p)
                .map_err(|e| UsageError(format!("cannot read config {}: {e}", p.display())))?;
            parse_config_text(&text).map_err(|e| UsageError(format!("{}: {e}", p.display())))?
        }
        None => Vec::new(),
    };
    RunConfig::resolve(cmd.name(), &cmd.schema(), &file, &overrides)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, rest) = match cli.command {
        Sub::PretrainChar(r) => (Command::PretrainChar, r),
        Sub::PretrainWord(r) => (Command::PretrainWord, r),
        Sub::Train(r) => (Command::Train, r),
        Sub::Predict(r) => (Command::Predict, r),
        Sub::Eval(r) => (Command::Eval, r),
        Sub::Embed(r) => (Command::Embed, r),
        Sub::Stats(r) => (Command::Stats, r),
    };
    if rest.args.iter().any(|a| a == "--help" || a == "-h") {
        print!("{}", help_text(cmd));
        return ExitCode::SUCCESS;
    }
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    let result = resolve(cmd, &rest.args)
        .map_err(Failure::from)
        .and_then(|rc| commands::run(cmd, &rc, &mut stdout.lock(), &mut stderr.lock()));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(stderr.lock(), "error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
