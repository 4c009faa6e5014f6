use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use scenfuzz::campaign::output::{self, REPORT_FILE};
use scenfuzz::campaign::{compare_methods, find_failure, recompute_report, replay_failure, run_campaign};
use scenfuzz::error::{CampaignError, ConfigError, EnvError};
use scenfuzz::llm::PromptTemplate;
use scenfuzz::{CampaignConfig, CampaignReport, EnvRegistry, Method};

#[derive(Parser)]
#[command(name = "scenfuzz", version, about = "Search for failure scenarios of black-box decision-making policies")]
struct Cli {
    /// More log output (-v info, -vv debug, -vvv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Only log errors.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Campaign configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Dotted `key=value` override, e.g. `generator.alpha=20`. Bare keys refer
    /// to the [campaign] table.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// LLM backend, overriding `llm.backend`.
    #[arg(long, value_parser = ["heuristic", "mock", "http"])]
    backend: Option<String>,
}

impl ConfigArgs {
    fn all_overrides(&self) -> Vec<String> {
        let mut o = self.overrides.clone();
        if let Some(b) = &self.backend {
            o.push(format!("llm.backend=\"{b}\""));
        }
        o
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one campaign.
    Run(ConfigArgs),
    /// Re-execute a recorded failure.
    Replay {
        /// Campaign output directory.
        #[arg(long)]
        dir: PathBuf,
        /// Scenario id of the failure record.
        #[arg(long)]
        failure: u64,
        /// Print the observation at every frame as CSV.
        #[arg(long)]
        trace: bool,
    },
    /// Recompute the results table of an output directory.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Run several methods on one environment and tabulate them.
    Compare {
        /// One config per method, or a single base config with --methods.
        #[arg(long, required = true)]
        config: Vec<PathBuf>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, value_parser = ["heuristic", "mock", "http"])]
        backend: Option<String>,
        /// Comma-separated methods run from the single base config.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<Method>,
        /// Directory for comparison.md and series.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a prompt template against an environment's scenario space.
    ValidateTemplate {
        /// Environment name.
        #[arg(long)]
        env: String,
        /// Template file; the shipped template for `env` when omitted.
        #[arg(long)]
        template: Option<PathBuf>,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<CampaignError>() {
        Some(CampaignError::Config(_) | CampaignError::Template(_) | CampaignError::Env(EnvError::Unknown(_))) => 2,
        Some(CampaignError::Backend(_)) => 3,
        Some(CampaignError::ReplayDivergence { .. }) => 4,
        Some(_) => 1,
        None if err.downcast_ref::<ConfigError>().is_some() => 2,
        None => 1,
    }
}

fn load(path: &Path, overrides: &[String]) -> Result<CampaignConfig> {
    CampaignConfig::load(path, overrides).map_err(|e| CampaignError::from(e).into())
}

fn print_summary(r: &CampaignReport, config: &CampaignConfig) {
    println!("environment   {}", r.environment);
    println!("method        {}", r.method);
    println!("seed          {}", r.seed);
    println!("tests         {}", r.tests_run);
    println!("failures      {}", r.failures);
    println!("failure rate  {:.4}", r.failure_rate);
    if let Some(d) = &r.diversity {
        println!("diversity     initial {} / terminal {} / entire {}", d.n_initial, d.n_terminal, d.n_entire);
    }
    if r.method.uses_llm() {
        println!("llm calls     {} ({} requests)", r.llm_calls, r.llm_requests);
    }
    if r.method.uses_corpus() {
        println!("random calls  {}", r.random_calls);
        println!("skipped       {}", r.skipped);
    }
    if let Some(a) = r.final_alpha {
        println!("final alpha   {a}");
    }
    if let (Some(dir), Some(digest)) = (&config.campaign.output_dir, &r.digest) {
        println!("output        {}", dir.display());
        println!("digest        {digest}");
    }
    println!("wall clock    {:.2}s", r.wall_clock.as_secs_f64());
}

fn cmd_run(args: &ConfigArgs, registry: &EnvRegistry) -> Result<()> {
    let config = load(&args.config, &args.all_overrides())?;
    let report = run_campaign(&config, registry)?;
    print_summary(&report, &config);
    Ok(())
}

fn cmd_replay(dir: &Path, id: u64, trace: bool, registry: &EnvRegistry) -> Result<()> {
    let mut config = output::read_snapshot(dir)?;
    let env = registry.create(&config.campaign.environment).map_err(CampaignError::from)?;
    config.resolve(env.as_ref()).map_err(CampaignError::from)?;
    let records = output::read_failures(dir)?;
    let record = find_failure(&records, id).ok_or_else(|| anyhow!("no failure record with id {id} in {}", dir.display()))?;
    let trajectory = replay_failure(record, env.as_ref(), config.campaign.max_frames.expect("resolved"))?;
    if trace {
        let names = (0..trajectory[0].observation.len()).map(|i| format!("obs{i}")).collect::<Vec<_>>().join(",");
        println!("frame,{names}");
        for s in &trajectory {
            let obs = s.observation.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
            println!("{},{obs}", s.frame);
        }
    } else {
        println!(
            "failure {id} reproduced: {} at frame {}",
            record.failure_kind.as_deref().unwrap_or("failure"),
            record.frames
        );
    }
    Ok(())
}

fn cmd_report(dir: &Path, registry: &EnvRegistry) -> Result<()> {
    let recomputed = recompute_report(dir, registry)?;
    print!("{}", recomputed.results_md);
    let path = dir.join(REPORT_FILE);
    let stored = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    if !stored.contains(&recomputed.results_md) {
        bail!("{} disagrees with the recomputed results", path.display());
    }
    Ok(())
}

fn cmd_compare(
    paths: &[PathBuf],
    overrides: &[String],
    backend: Option<&str>,
    methods: &[Method],
    out: Option<&Path>,
    registry: &EnvRegistry,
) -> Result<()> {
    let mut overrides = overrides.to_vec();
    if let Some(b) = backend {
        overrides.push(format!("llm.backend=\"{b}\""));
    }
    let configs = if methods.is_empty() {
        paths.iter().map(|p| load(p, &overrides)).collect::<Result<Vec<_>>>()?
    } else {
        if paths.len() != 1 {
            return Err(CampaignError::from(ConfigError::Invalid("--methods takes exactly one --config".into())).into());
        }
        let base = load(&paths[0], &overrides)?;
        methods
            .iter()
            .map(|&m| {
                let mut c = base.clone();
                c.campaign.method = m;
                c.campaign.output_dir = base.campaign.output_dir.as_ref().map(|d| d.join(m.as_str()));
                c
            })
            .collect()
    };
    let comparison = compare_methods(&configs, registry, None)?;
    let md = comparison.to_markdown();
    print!("{md}");
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        std::fs::write(dir.join("comparison.md"), &md)?;
        std::fs::write(dir.join("series.csv"), comparison.series_csv())?;
    }
    Ok(())
}

fn cmd_validate_template(env_name: &str, template: Option<&Path>, registry: &EnvRegistry) -> Result<()> {
    let env = registry.create(env_name).map_err(CampaignError::from)?;
    let template = match template {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| {
                CampaignError::from(ConfigError::Io { path: p.display().to_string(), reason: e.to_string() })
            })?;
            PromptTemplate::parse(&text).map_err(CampaignError::from)?
        }
        None => PromptTemplate::builtin(env_name)
            .ok_or_else(|| CampaignError::from(ConfigError::Invalid(format!("no shipped template for `{env_name}`"))))?,
    };
    template.validate(env.space()).map_err(CampaignError::from)?;
    println!("template is valid for {env_name} ({} dimensions)", env.space().dims());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Error,
        (_, 0) => log::LevelFilter::Warn,
        (_, 1) => log::LevelFilter::Info,
        (_, 2) => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();

    let registry = EnvRegistry::with_builtins();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args, &registry),
        Command::Replay { dir, failure, trace } => cmd_replay(dir, *failure, *trace, &registry),
        Command::Report { dir } => cmd_report(dir, &registry),
        Command::Compare { config, overrides, backend, methods, out } => {
            cmd_compare(config, overrides, backend.as_deref(), methods, out.as_deref(), &registry)
        }
        Command::ValidateTemplate { env, template } => cmd_validate_template(env, template.as_deref(), &registry),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // campaign errors already embed their cause in the message
            if e.downcast_ref::<CampaignError>().is_some() {
                eprintln!("error: {e}");
            } else {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
