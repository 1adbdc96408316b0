//! `storysizer`: drive a story sizing session from the shell.
//!
//! Every subcommand owns the session through `<session>.lock` for its whole
//! run. Failures are printed to stderr as one JSON object per line and exit
//! nonzero.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use storysizer_core::llm::BackendDescriptor;

#[derive(Debug, Parser)]
#[command(name = "storysizer", version, about = "Decompose user stories into MVC tasks and size the effort")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct SessionArg {
    /// Session file (JSON).
    #[arg(long, env = "STORYSIZER_SESSION")]
    session: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Create a new session file.
    Init(InitArgs),
    /// Add a user story to an existing session.
    AddStory {
        #[command(flatten)]
        session: SessionArg,
        #[arg(long)]
        story: String,
    },
    /// Generate questions and plan tasks for stories.
    Run(RunArgs),
    /// Human validation of planned tasks.
    #[command(subcommand)]
    Review(ReviewCommand),
    /// Render the effort report.
    Report(ReportArgs),
    /// Freeze the validated inventory.
    Finalize {
        #[command(flatten)]
        session: SessionArg,
        /// Only finalize if the inventory snapshot still has this hash.
        #[arg(long)]
        expect: Option<String>,
        #[arg(long, default_value = "operator")]
        actor: String,
    },
    /// Manage recorded completions.
    #[command(subcommand)]
    Fixtures(FixturesCommand),
}

#[derive(Debug, Args)]
struct InitArgs {
    #[command(flatten)]
    session: SessionArg,
    /// User story text; repeat for several stories.
    #[arg(long = "story", required = true)]
    stories: Vec<String>,
    /// File whose text is sent as contextual information to the planner.
    #[arg(long)]
    context: Option<PathBuf>,
    /// File listing known data sources, one per line.
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Related questions to generate per story.
    #[arg(long, default_value_t = storysizer_core::engine::DEFAULT_N_QUESTIONS)]
    n: usize,
    /// Duplicate similarity threshold in (0, 1].
    #[arg(long, default_value_t = storysizer_core::dedup::DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Directory holding question_gen.prompt and planner.prompt.
    #[arg(long)]
    prompts: Option<PathBuf>,
    /// Default backend: live:<url>, fixture:<path> or record:<path>.
    #[arg(long)]
    backend: Option<BackendDescriptor>,
    #[arg(long)]
    no_minimize: bool,
    #[arg(long)]
    no_dedup: bool,
    /// Reject the whole planner answer when any row is malformed.
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    model: Option<String>,
    /// Replace an existing session file.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    session: SessionArg,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    backend: Option<BackendDescriptor>,
    #[arg(long)]
    no_minimize: bool,
    /// Story to (re)plan; repeatable. Defaults to every unplanned story.
    #[arg(long = "story")]
    stories: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum ReviewCommand {
    /// Serve the review API on loopback until interrupted.
    Serve {
        #[command(flatten)]
        session: SessionArg,
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Backend used by POST /iterations.
        #[arg(long)]
        backend: Option<BackendDescriptor>,
    },
    /// Write pending tasks to an editable CSV file.
    Export {
        #[command(flatten)]
        session: SessionArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply an edited review file.
    Apply {
        #[command(flatten)]
        session: SessionArg,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = storysizer_core::review::DEFAULT_ACTOR)]
        actor: String,
    },
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[command(flatten)]
    session: SessionArg,
    #[arg(long, default_value = "md")]
    format: storysizer_core::report::ReportFormat,
    /// Do not add the agent interface to the user interface count.
    #[arg(long)]
    no_agent_ui: bool,
    /// Manual estimate as tables,algorithms,widgets.
    #[arg(long)]
    baseline: Option<storysizer_core::report::Baseline>,
    /// Write to a file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum FixturesCommand {
    /// Export the completions stored in a session as a replay fixture.
    Record {
        #[command(flatten)]
        session: SessionArg,
        #[arg(long)]
        out: PathBuf,
        /// Overwrite conflicting recordings.
        #[arg(long)]
        force: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", err.to_json());
            ExitCode::from(err.exit)
        }
    }
}
