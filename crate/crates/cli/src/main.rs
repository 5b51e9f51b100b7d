use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fungrasp_core::eval::Component;

mod commands;
mod config;

use config::RunConfig;

/// Demonstration-editing RL for dexterous functional grasping.
///
/// Flags override values from --config. All randomness derives from --seed.
/// Log verbosity follows FUNGRASP_LOG (error, warn, info, debug, trace).
#[derive(Debug, Parser)]
#[command(name = "fungrasp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a policy; writes metrics.jsonl, checkpoints and train_report.json to --out.
    Train {
        #[command(flatten)]
        common: Common,
        /// Override the number of PPO iterations.
        #[arg(long, value_name = "N")]
        iterations: Option<usize>,
    },
    /// Evaluate a checkpoint (or a fixed actor); writes eval_report.json and episodes.jsonl.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        actor: ActorArgs,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Train with and without one component and report both evaluations.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Component to disable: afford, clip, close, qpos or disturbance.
        #[arg(long, value_name = "NAME")]
        component: String,
        #[arg(long, value_name = "N")]
        iterations: Option<usize>,
        /// Evaluation episodes per policy.
        #[arg(long, value_name = "N")]
        episodes: Option<usize>,
    },
    /// Roll out an actor and export trajectories as JSONL plus a manifest.
    Collect {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        actor: ActorArgs,
        #[arg(long, value_name = "N")]
        episodes: Option<usize>,
        /// Export only successful episodes.
        #[arg(long)]
        success_only: bool,
    },
    /// Draw affordance points from each object's affordance distribution.
    SampleAffordance {
        #[command(flatten)]
        common: Common,
        /// Samples per object.
        #[arg(long, value_name = "N", default_value_t = 5)]
        episodes: usize,
    },
    /// Demonstration utilities.
    Demo {
        #[command(subcommand)]
        command: DemoCommand,
    },
    /// Compare analytic and finite-difference gradients of the PPO loss.
    CheckGradients {
        #[command(flatten)]
        common: Common,
        /// Parameters to check.
        #[arg(long, value_name = "N", default_value_t = 256)]
        count: usize,
    },
}

#[derive(Debug, Subcommand)]
enum DemoCommand {
    /// Summarize the demonstration and replay it unedited on every object and style.
    Inspect {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Clone, Default, Args)]
struct Common {
    /// TOML or JSON run configuration.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
    /// Directory of object .ply files.
    #[arg(long, value_name = "DIR")]
    objects: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    demo: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    hand: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    styles: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

impl Common {
    /// Config file values with flags applied on top.
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if self.seed.is_some() {
            c.seed = self.seed;
        }
        if let Some(w) = self.workers {
            if w == 0 {
                return Err(UserError::new("--workers must be at least 1").into());
            }
            c.workers = Some(w);
        }
        let a = &mut c.assets;
        for (flag, slot) in [
            (&self.objects, &mut a.objects),
            (&self.demo, &mut a.demo),
            (&self.hand, &mut a.hand),
            (&self.styles, &mut a.styles),
        ] {
            if flag.is_some() {
                *slot = flag.clone();
            }
        }
        if self.out.is_some() {
            c.out = self.out.clone();
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ActorKind {
    /// The policy stored in --checkpoint.
    Policy,
    /// The unedited demonstration.
    Identity,
    /// Uniform random edits inside the action bounds.
    Random,
}

#[derive(Debug, Clone, Args)]
struct ActorArgs {
    #[arg(long, value_enum, default_value_t = ActorKind::Policy)]
    actor: ActorKind,
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    /// Sample actions instead of taking the squashed mean.
    #[arg(long)]
    stochastic: bool,
}

#[derive(Debug, Clone, Args)]
struct EvalArgs {
    #[arg(long, value_name = "N")]
    episodes: Option<usize>,
    /// Replay every style per episode and keep the best.
    #[arg(long)]
    exhaustive_styles: bool,
    /// Count a success only within 4 cm of the affordance and in the conditioned style.
    #[arg(long)]
    strict_success: bool,
}

/// An error caused by the invocation rather than by the program.
#[derive(Debug)]
pub struct UserError(String);

impl UserError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

impl fmt::Display for UserError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UserError {}

/// 1 for bad input, 2 for internal failures.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UserError>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<fungrasp_core::Error>() {
            return if e.is_user_error() { 1 } else { 2 };
        }
    }
    2
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { common, iterations } => commands::train(common.resolve()?, iterations),
        Command::Eval { common, actor, eval } => commands::eval(common.resolve()?, &actor, &eval),
        Command::Ablate {
            common,
            component,
            iterations,
            episodes,
        } => {
            let component: Component = component.parse().map_err(|e: fungrasp_core::Error| UserError::new(e.to_string()))?;
            commands::ablate(common.resolve()?, component, iterations, episodes)
        }
        Command::Collect {
            common,
            actor,
            episodes,
            success_only,
        } => commands::collect(common.resolve()?, &actor, episodes, success_only),
        Command::SampleAffordance { common, episodes } => commands::sample_affordance(common.resolve()?, episodes),
        Command::Demo {
            command: DemoCommand::Inspect { common },
        } => commands::demo_inspect(common.resolve()?),
        Command::CheckGradients { common, count } => commands::check_gradients(common.resolve()?, count),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FUNGRASP_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
