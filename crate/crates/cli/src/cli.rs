//! Command-line dispatch.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use promptloom_core::config::{ConfigError, FieldSchema, OptimizerBackend, SearchStrategy};
use promptloom_core::metrics::{evaluate, MetricKind, StudentScorer};
use promptloom_core::providers::ProviderKind;
use promptloom_core::session::{self, FeedbackDraft, SessionError, SessionStore};
use promptloom_core::synthgen::{examples_to_jsonl, generate_dataset};
use promptloom_core::{Engine, Error, RunOptions};
use serde::Serialize;

use crate::errors::AppError;
use crate::provider::ProviderSettings;
use crate::service::{serve, ServeOptions};
use crate::view::{session_document, OptimizeResponse};

#[derive(Debug, Parser)]
#[command(name = "promptloom", version, about = "Optimize prompts from a task description")]
pub struct Cli {
    /// Print machine-readable JSON.
    #[arg(long, global = true)]
    pub json: bool,

    /// Directory holding stored sessions.
    #[arg(long, global = true, env = "PROMPTLOOM_STORE_DIR", default_value = "promptloom-sessions")]
    pub store_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct ProviderArgs {
    /// openai-compatible, anthropic-compatible, local-endpoint or mock.
    #[arg(long)]
    pub provider: Option<ProviderKind>,
    /// Model name for both teacher and student.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub teacher_model: Option<String>,
    #[arg(long)]
    pub student_model: Option<String>,
    #[arg(long)]
    pub api_base: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long)]
    pub api_key_env: Option<String>,
    /// JSON script for the mock provider; implies --provider mock.
    #[arg(long)]
    pub mock_script: Option<PathBuf>,
}

impl ProviderArgs {
    pub fn settings(&self) -> ProviderSettings {
        ProviderSettings {
            provider: self.provider,
            teacher_model: self.teacher_model.clone().or_else(|| self.model.clone()),
            student_model: self.student_model.clone().or_else(|| self.model.clone()),
            api_base: self.api_base.clone(),
            api_key_env: self.api_key_env.clone(),
            mock_script: self.mock_script.clone(),
        }
    }
}

#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false)]
pub struct InputArgs {
    /// Task objective, optionally in marker format.
    #[arg(long)]
    pub input: Option<String>,
    /// File holding the task objective.
    #[arg(long)]
    pub input_file: Option<PathBuf>,
}

impl InputArgs {
    fn read(&self) -> Result<String, AppError> {
        match (&self.input, &self.input_file) {
            (Some(s), _) => Ok(s.clone()),
            (None, Some(p)) => std::fs::read_to_string(p)
                .map_err(|e| config_error(format!("cannot read {}: {e}", p.display()))),
            (None, None) => unreachable!("clap requires one input flag"),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the full pipeline and store a session.
    Optimize {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value = "quick_search")]
        strategy: SearchStrategy,
        #[arg(long)]
        backend: Option<OptimizerBackend>,
        #[arg(long, allow_hyphen_values = true)]
        lambda: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        n_samples: Option<usize>,
        #[arg(long)]
        n_trials: Option<usize>,
        #[command(flatten)]
        provider: ProviderArgs,
    },
    /// Generate a synthetic dataset as JSON lines.
    GenerateData {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        n: usize,
        /// JSON file with input_fields and output_fields.
        #[arg(long)]
        schema_file: Option<PathBuf>,
        /// Write JSON lines here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        provider: ProviderArgs,
    },
    /// Score a stored prompt version on the session's validation split.
    Evaluate {
        #[arg(long)]
        session: String,
        /// Defaults to the latest version.
        #[arg(long)]
        version: Option<usize>,
        /// Defaults to the session's metric.
        #[arg(long)]
        metric: Option<MetricKind>,
        #[command(flatten)]
        provider: ProviderArgs,
    },
    /// Attach a comment to a character span of a prompt version or example.
    Feedback {
        #[arg(long)]
        session: String,
        /// Prompt version; defaults to the latest.
        #[arg(long, conflicts_with = "example")]
        version: Option<usize>,
        /// Synthetic example id instead of a prompt version.
        #[arg(long)]
        example: Option<String>,
        #[arg(long)]
        start: usize,
        #[arg(long)]
        end: usize,
        #[arg(long)]
        comment: String,
        /// Expected text of the span, checked against the stored text.
        #[arg(long)]
        selected_text: Option<String>,
    },
    /// Fold feedback into the task and optimize again.
    Reoptimize {
        #[arg(long)]
        session: String,
        #[command(flatten)]
        provider: ProviderArgs,
    },
    /// Inspect stored sessions.
    Sessions {
        #[command(subcommand)]
        action: SessionsAction,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        /// Origin allowed to call the API from a browser.
        #[arg(long)]
        cors_origin: Option<String>,
        /// Static files served for paths outside the API.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
        #[command(flatten)]
        provider: ProviderArgs,
    },
}

#[derive(Debug, Subcommand)]
pub enum SessionsAction {
    List,
    Show { id: String },
}

fn config_error(msg: String) -> AppError {
    AppError::Engine(ConfigError::Invalid(msg).into())
}

fn engine(p: &ProviderArgs) -> Result<Engine, AppError> {
    p.settings().build_engine().map_err(|e| AppError::Engine(e.into()))
}

fn open_store(cli: &Cli) -> Result<SessionStore, AppError> {
    Ok(SessionStore::open(&cli.store_dir)?)
}

struct Output<'a> {
    out: &'a mut dyn Write,
    json: bool,
}

impl Output<'_> {
    /// JSON when requested, else the human rendering.
    fn emit<T: Serialize>(&mut self, value: &T, human: impl FnOnce() -> String) -> std::io::Result<()> {
        if self.json {
            writeln!(self.out, "{}", serde_json::to_string_pretty(value).expect("output serializes"))
        } else {
            writeln!(self.out, "{}", human())
        }
    }
}

fn execute(cli: &Cli, out: &mut Output<'_>) -> Result<(), AppError> {
    let io = |e: std::io::Error| AppError::Engine(SessionError::Storage(format!("write failed: {e}")).into());
    match &cli.command {
        Command::Optimize { input, strategy, backend, lambda, seed, n_samples, n_trials, provider } => {
            let raw = input.read()?;
            let opts = RunOptions {
                strategy: *strategy,
                backend: *backend,
                lambda: *lambda,
                seed: *seed,
                n_samples: *n_samples,
                n_trials: *n_trials,
            };
            let store = open_store(cli)?;
            let session = engine(provider)?.run_session(&raw, &opts, &store, None)?;
            let resp = OptimizeResponse::of(&session);
            out.emit(&resp, || {
                format!(
                    "session {}\nbaseline {:.4}  best {:.4}  length {}  examples {}  trials {}\n\n{}",
                    resp.session_id,
                    resp.baseline_score,
                    resp.best_score,
                    resp.prompt_length,
                    resp.dataset_size,
                    resp.trials_run,
                    resp.best_prompt_text
                )
            })
            .map_err(io)?;
        }
        Command::GenerateData { input, n, schema_file, out: path, provider } => {
            let raw = input.read()?;
            let engine = engine(provider)?;
            let mut spec = engine.configure(&raw)?;
            if let Some(p) = schema_file {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| config_error(format!("cannot read {}: {e}", p.display())))?;
                let schema: FieldSchema = serde_json::from_str(&text)
                    .map_err(|e| config_error(format!("bad schema file {}: {e}", p.display())))?;
                spec.schema = Some(schema);
            }
            let schema = spec.schema.clone().expect("configure assigns a schema");
            let budget = engine.teacher.config().max_tokens as usize;
            let dataset = generate_dataset(&spec, &schema, *n, &engine.teacher, budget).map_err(Error::from)?;
            let lines = examples_to_jsonl(&dataset.examples);
            match path {
                Some(p) => {
                    std::fs::write(p, &lines).map_err(io)?;
                    out.emit(&dataset.generation_log, || format!("wrote {} examples to {}", dataset.examples.len(), p.display()))
                        .map_err(io)?;
                }
                None if out.json => out.emit(&dataset, String::new).map_err(io)?,
                None => write!(out.out, "{lines}").map_err(io)?,
            }
        }
        Command::Evaluate { session, version, metric, provider } => {
            let store = open_store(cli)?;
            let s = store.load(session)?;
            let v = match version {
                Some(i) => s.versions.get(*i).ok_or_else(|| SessionError::UnknownTarget(format!("version {i}")))?,
                None => s.latest().expect("sessions hold a baseline version"),
            };
            let mut spec = s.configs.metric;
            if let Some(k) = metric {
                spec.primary_metric = *k;
            }
            let scorer = StudentScorer::new(engine(provider)?.student, spec);
            let result = evaluate(&v.prompt, &s.split.val, &scorer, &s.configs.objective).map_err(Error::from)?;
            out.emit(&result, || {
                format!(
                    "version {}  {}  performance {:.4}  combined {:.4}  length {}",
                    v.index,
                    serde_json::to_value(spec.primary_metric).expect("metric serializes").as_str().unwrap_or_default(),
                    result.performance,
                    result.combined,
                    result.prompt_length
                )
            })
            .map_err(io)?;
        }
        Command::Feedback { session, version, example, start, end, comment, selected_text } => {
            let store = open_store(cli)?;
            let mut s = store.load(session)?;
            let mut draft = match example {
                Some(id) => FeedbackDraft::on_example(id.clone(), *start, *end, comment.clone()),
                None => {
                    let v = version.unwrap_or(s.versions.len().saturating_sub(1));
                    FeedbackDraft::on_version(v, *start, *end, comment.clone())
                }
            };
            draft.selected_text = selected_text.clone();
            let item = session::record_feedback(&store, &mut s, draft)?;
            out.emit(&item, || format!("feedback {} on {:?}", item.id, item.selected_text)).map_err(io)?;
        }
        Command::Reoptimize { session, provider } => {
            let store = open_store(cli)?;
            let mut s = store.load(session)?;
            let v = engine(provider)?.reoptimize(&store, &mut s)?;
            out.emit(&v, || {
                format!("version {}  combined {:.4}  length {}\n\n{}", v.index, v.evaluation.combined, v.evaluation.prompt_length, v.prompt_text)
            })
            .map_err(io)?;
        }
        Command::Sessions { action: SessionsAction::List } => {
            let list = open_store(cli)?.list()?;
            out.emit(&list, || {
                list.iter()
                    .map(|s| {
                        let best = s.best_combined.map_or("-".into(), |c| format!("{c:.4}"));
                        format!("{}  {}  versions {}  best {}  {}", s.id, s.created_at.to_rfc3339(), s.versions, best, s.task)
                    })
                    .collect::<Vec<_>>()
                    .join("\n")
            })
            .map_err(io)?;
        }
        Command::Sessions { action: SessionsAction::Show { id } } => {
            let s = open_store(cli)?.load(id)?;
            let doc = session_document(&s);
            out.emit(&doc, || {
                let mut text = format!("session {}\ntask {}\n", s.id, s.spec.task_text());
                for v in &s.versions {
                    text.push_str(&format!(
                        "\nversion {} (combined {:.4}, length {})\n{}\n",
                        v.index, v.evaluation.combined, v.evaluation.prompt_length, v.prompt_text
                    ));
                }
                text.push_str(&format!("\nfeedback {} ({} unresolved)", s.feedback.len(), s.unresolved_count()));
                text
            })
            .map_err(io)?;
        }
        Command::Serve { port, host, cors_origin, ui_dir, provider } => {
            let store = open_store(cli)?;
            let settings = provider.settings();
            settings.build_engine().map_err(|e| AppError::Engine(e.into()))?;
            let opts = ServeOptions { cors_origin: cors_origin.clone(), ui_dir: ui_dir.clone() };
            let rt = tokio::runtime::Runtime::new().map_err(io)?;
            rt.block_on(serve(std::net::SocketAddr::new(*host, *port), store, settings, opts)).map_err(io)?;
        }
    }
    Ok(())
}

/// Parses `args` and runs the command. Returns 0 on success, 1 on a domain
/// error and 2 on a usage error.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    let mut output = Output { out, json: cli.json };
    match execute(&cli, &mut output) {
        Ok(()) => 0,
        Err(e) => {
            if cli.json {
                let _ = writeln!(output.out, "{}", serde_json::to_string_pretty(&e.body()).expect("error serializes"));
            }
            let _ = writeln!(err, "error: {}: {e}", e.name());
            1
        }
    }
}
