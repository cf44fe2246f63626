use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use feedback_harness::config::RunConfig;
use feedback_harness::llm::{ChatModel, HttpChatClient, MockScript, ScriptedModel};
use feedback_harness::prompts::{InstructionVariant, PromptTemplateSet};
use feedback_harness::run::{cmd_evaluate, cmd_report, cmd_translate, CancelToken};
use feedback_harness::sandbox::Sandbox;

#[derive(Parser)]
#[command(name = "feedback-harness", version, about = "Execution-feedback code generation harness")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Translate task instructions to English with their tests in context.
    Translate(RunFlags),
    /// Generate, execute and refine solutions for every task.
    Evaluate(RunFlags),
    /// Render Pass@1 tables from one or more run directories.
    Report {
        /// Run directories; defaults to the configured output directory.
        dirs: Vec<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct RunFlags {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    split: Option<String>,
    #[arg(long, value_parser = parse_variant)]
    variant: Option<InstructionVariant>,
    #[arg(long)]
    max_attempts: Option<u32>,
    /// Per-candidate execution timeout in seconds.
    #[arg(long)]
    timeout: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    translations: Option<PathBuf>,
    #[arg(long)]
    label: Option<String>,
    /// Scripted endpoint replies (JSON) used instead of a live model.
    #[arg(long)]
    mock: Option<PathBuf>,
}

fn parse_variant(s: &str) -> Result<InstructionVariant, String> {
    s.parse().map_err(|e: feedback_harness::prompts::PromptError| e.to_string())
}

fn load_config(path: Option<&PathBuf>, flags: Option<&RunFlags>) -> anyhow::Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let Some(f) = flags else { return Ok(cfg) };
    if let Some(v) = &f.dataset {
        cfg.dataset = v.clone();
    }
    if let Some(v) = &f.split {
        cfg.split = v.clone();
    }
    if let Some(v) = f.variant {
        cfg.refine.instruction_variant = v;
    }
    if let Some(v) = f.max_attempts {
        cfg.refine.max_attempts = v;
    }
    if let Some(v) = f.timeout {
        cfg.refine.timeout_secs = v;
    }
    if let Some(v) = f.workers {
        cfg.workers = v;
    }
    if let Some(v) = &f.output {
        cfg.output_dir = v.clone();
    }
    if let Some(v) = &f.translations {
        cfg.translations = Some(v.clone());
    }
    if let Some(v) = &f.label {
        cfg.label = v.clone();
    }
    cfg.resume |= f.resume;
    Ok(cfg)
}

fn model_for(flags: &RunFlags, endpoint: &feedback_harness::EndpointConfig) -> anyhow::Result<Box<dyn ChatModel>> {
    Ok(match &flags.mock {
        Some(path) => Box::new(ScriptedModel::new(
            MockScript::load(path).with_context(|| format!("loading mock script {}", path.display()))?,
        )),
        None => Box::new(HttpChatClient::new(endpoint.clone())?),
    })
}

fn templates(cfg: &RunConfig) -> anyhow::Result<PromptTemplateSet> {
    Ok(match &cfg.templates_dir {
        Some(dir) => PromptTemplateSet::from_dir(dir)?,
        None => PromptTemplateSet::builtin().clone(),
    })
}

fn cancel_on_ctrlc() -> CancelToken {
    let cancel = CancelToken::new();
    let handle = cancel.clone();
    if let Err(e) = ctrlc::set_handler(move || {
        eprintln!("interrupt: finishing in-flight tasks");
        handle.cancel();
    }) {
        tracing::warn!(error = %e, "cannot install interrupt handler");
    }
    cancel
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match &cli.command {
        Command::Translate(flags) => {
            let cfg = load_config(cli.config.as_ref(), Some(flags))?;
            let model = model_for(flags, cfg.translator_endpoint())?;
            let outcome = cmd_translate(&cfg, model.as_ref(), &templates(&cfg)?, &cancel_on_ctrlc())?;
            println!(
                "translated {} task(s), skipped {}, failed {} -> {}",
                outcome.translated,
                outcome.skipped,
                outcome.failed.len(),
                outcome.output.display()
            );
            Ok(if outcome.failed.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Evaluate(flags) => {
            let cfg = load_config(cli.config.as_ref(), Some(flags))?;
            let model = model_for(flags, &cfg.endpoint)?;
            let sandbox = Sandbox::new(cfg.sandbox.clone());
            let outcome = cmd_evaluate(&cfg, model.as_ref(), &sandbox, &templates(&cfg)?, &cancel_on_ctrlc())?;
            let report = cmd_report(std::slice::from_ref(&cfg.output_dir))?;
            print!("{}", report.text);
            for (id, reason) in &outcome.aborted {
                eprintln!("aborted {id}: {reason}");
            }
            if !outcome.complete {
                eprintln!("corpus incomplete: rerun with --resume to finish");
                return Ok(ExitCode::FAILURE);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { dirs } => {
            let dirs = if dirs.is_empty() {
                vec![load_config(cli.config.as_ref(), None)?.output_dir]
            } else {
                dirs.clone()
            };
            let report = cmd_report(&dirs)?;
            print!("{}", report.text);
            for warning in &report.warnings {
                eprintln!("warning: {warning}");
            }
            Ok(if report.warnings.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
