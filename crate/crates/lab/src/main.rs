use std::fs::File;
use std::io::BufWriter;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use estop_core::bounds::{coupon_probability, cover_probability};
use estop_core::mdp::{policy_value, EvalMode};
use estop_core::{learned_estop, learned_estop_by_fraction, mdp_to_json, solve_estop, write_demos, SupportSet};
use estop_lab::certify::write_sweep;
use estop_lab::experiments::FEASIBLE_TOL;
use estop_lab::pipeline::{build_expert, collect_demos, load_demos};
use estop_lab::{
    certification_sweep, certify_config, run_ablation, run_learning_experiment, run_vi_sweep, write_ablation,
    write_learning, write_vi_sweep, AblationKind, ExperimentConfig, LabError, Variant,
};
use serde_json::json;

#[derive(Debug, Parser)]
#[command(name = "estop-lab", version, about = "Build, solve and learn on e-stop MDPs")]
struct Cli {
    /// Experiment configuration (TOML or JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Tabular models.
    #[command(subcommand)]
    Mdp(MdpCommand),
    /// The configured expert.
    #[command(subcommand)]
    Expert(ExpertCommand),
    /// Demonstrations from the configured expert.
    #[command(subcommand)]
    Demos(DemosCommand),
    /// E-stop MDPs learned from demonstrations.
    #[command(subcommand)]
    Estop(EstopCommand),
    /// Full experiments with CSV output.
    #[command(subcommand)]
    Run(RunCommand),
    /// Exact bound certificates.
    #[command(subcommand)]
    Bounds(BoundsCommand),
    /// Probability that n uniform draws cover m states (or m states of mass eps-d).
    Coupon {
        #[arg(long)]
        m: usize,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        eps_d: Option<f64>,
    },
    /// Starts the supervisor HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

#[derive(Debug, Subcommand)]
enum MdpCommand {
    /// Writes the configured FrozenLake model as `mdp.json`.
    BuildFrozenlake,
}

#[derive(Debug, Subcommand)]
enum ExpertCommand {
    /// Writes the expert's greedy actions and value as `expert.json`.
    Solve,
}

#[derive(Debug, Subcommand)]
enum DemosCommand {
    /// Writes `demos.jsonl`, one trajectory per line.
    Rollout {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct RemovalArgs {
    /// Removed hitting-probability budget.
    #[arg(long)]
    xi: Option<f64>,
    /// Fraction of states removed by estimated hitting probability.
    #[arg(long)]
    fraction: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum EstopCommand {
    /// Builds the e-stop MDP and writes `estop_support.json`.
    Learn {
        #[command(flatten)]
        removal: RemovalArgs,
        /// Demonstrations to use instead of fresh expert rollouts.
        #[arg(long)]
        demos: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AblationArg {
    Noise,
    Demos,
}

#[derive(Debug, Subcommand)]
enum RunCommand {
    /// Optimal values and VI cost over growing removal fractions.
    ViSweep,
    /// Learning curves with and without the e-stop support.
    Learn,
    /// Exact e-stop optima over an expert-noise or demo-count grid.
    Ablation {
        #[arg(long, value_enum, default_value = "noise")]
        kind: AblationArg,
    },
}

#[derive(Debug, Subcommand)]
enum BoundsCommand {
    /// Certificates for the configured expert and support.
    Certify,
    /// Certificates on random small instances, written to `certificates.csv`.
    Sweep {
        #[arg(long, default_value_t = 1000)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_path(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn out_file(cfg: &ExperimentConfig, name: &str) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(&cfg.output_dir).with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    Ok(cfg.output_dir.join(name))
}

fn write_json(path: &Path, value: &serde_json::Value) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = load_config(&cli)?;
    let hash = cfg.hash();
    match cli.command {
        Command::Mdp(MdpCommand::BuildFrozenlake) => {
            let mdp = cfg.frozen_lake()?.build(cfg.learner.gamma)?;
            let path = out_file(&cfg, "mdp.json")?;
            std::fs::write(&path, mdp_to_json(&mdp)).with_context(|| format!("writing {}", path.display()))?;
            println!("{}", path.display());
        }
        Command::Expert(ExpertCommand::Solve) => {
            let mdp = cfg.frozen_lake()?.build(cfg.learner.gamma)?;
            let Some(pi) = build_expert(&mdp, &cfg.expert)? else {
                return Err(LabError::Config("a demo-file expert has no policy to solve".into()).into());
            };
            let j = policy_value(&mdp, &pi, EvalMode::FiniteHorizon)?;
            let actions: Vec<Vec<usize>> = (0..mdp.horizon().saturating_sub(1))
                .map(|t| (0..mdp.n_states()).map(|s| pi.mode_action(t, s)).collect())
                .collect();
            let path = out_file(&cfg, "expert.json")?;
            write_json(&path, &json!({ "config_hash": hash, "j_expert": j, "actions": actions }))?;
            println!("J(expert) = {j}");
        }
        Command::Demos(DemosCommand::Rollout { n, seed }) => {
            let mdp = cfg.frozen_lake()?.build(cfg.learner.gamma)?;
            let Some(pi) = build_expert(&mdp, &cfg.expert)? else {
                return Err(LabError::Config("rollouts need a policy expert, not a demo file".into()).into());
            };
            let demos = collect_demos(&mdp, &pi, n.unwrap_or(cfg.n_demos), seed.unwrap_or(cfg.demo_seed));
            let path = out_file(&cfg, "demos.jsonl")?;
            let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            write_demos(BufWriter::new(file), &demos)?;
            println!("{} demonstrations -> {}", demos.len(), path.display());
        }
        Command::Estop(EstopCommand::Learn { removal, demos }) => {
            let mdp = cfg.frozen_lake()?.build(cfg.learner.gamma)?;
            let demos = match demos {
                Some(path) => load_demos(&path)?,
                None => match build_expert(&mdp, &cfg.expert)? {
                    Some(pi) => collect_demos(&mdp, &pi, cfg.n_demos, cfg.demo_seed),
                    None => match &cfg.expert {
                        estop_lab::ExpertSource::DemoFile { path } => load_demos(path)?,
                        _ => unreachable!("only demo files come without a policy"),
                    },
                },
            };
            let estop = match (removal.xi, removal.fraction) {
                (Some(xi), _) if xi >= 0.0 => learned_estop(&mdp, &demos, xi)?,
                (_, Some(f)) if (0.0..=1.0).contains(&f) => learned_estop_by_fraction(&mdp, &demos, f)?,
                _ => return Err(LabError::Config("xi must be nonnegative and fraction in [0, 1]".into()).into()),
            };
            let opt = solve_estop(&estop)?;
            let path = out_file(&cfg, "estop_support.json")?;
            let doc = serde_json::to_value(SupportSet::StateSet(estop.support.clone()))?;
            write_json(&path, &doc)?;
            println!(
                "kept {} of {} states; J_estop(opt) = {}; J(opt) = {}",
                estop.support.len(),
                mdp.n_states(),
                opt.value_in_estop,
                opt.value_in_base
            );
            if opt.value_in_estop <= FEASIBLE_TOL {
                return Err(LabError::Infeasible("no path to reward survives the removal".into()).into());
            }
        }
        Command::Run(RunCommand::ViSweep) => {
            let rows = run_vi_sweep(&cfg)?;
            let path = write_vi_sweep(&rows, &cfg.output_dir, &hash)?;
            println!("{} rows -> {}", rows.len(), path.display());
            if rows.first().is_some_and(|r| !r.feasible) {
                return Err(LabError::Infeasible("the unmodified model has no path to reward".into()).into());
            }
        }
        Command::Run(RunCommand::Learn) => {
            let outcome = run_learning_experiment(&cfg)?;
            for path in write_learning(&outcome, &cfg.output_dir, &hash)? {
                println!("{}", path.display());
            }
            let fmt = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.0}"));
            println!(
                "median steps to 90% of asymptote: estop {} / full {}",
                fmt(outcome.median_steps_to_asymptote(Variant::Estop)),
                fmt(outcome.median_steps_to_asymptote(Variant::Full))
            );
        }
        Command::Run(RunCommand::Ablation { kind }) => {
            let kind = match kind {
                AblationArg::Noise => AblationKind::ExpertNoise,
                AblationArg::Demos => AblationKind::DemoCount,
            };
            let rows = run_ablation(&cfg, kind)?;
            let path = write_ablation(&rows, &cfg.output_dir, &hash)?;
            println!("{} rows -> {}", rows.len(), path.display());
        }
        Command::Bounds(BoundsCommand::Certify) => {
            let certs = certify_config(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&certs)?);
            if certs.iter().any(|c| !c.holds) {
                bail!("a certificate does not hold");
            }
        }
        Command::Bounds(BoundsCommand::Sweep { instances, seed }) => {
            let rows = certification_sweep(instances, seed)?;
            let sweep_hash = format!("sweep-{seed}-{instances}");
            let path = write_sweep(&rows, &cfg.output_dir, &sweep_hash)?;
            let failed = rows.iter().filter(|r| !r.all_hold()).count();
            println!("{} instances, {failed} violations -> {}", rows.len(), path.display());
            if failed > 0 {
                bail!("{failed} instances violate a bound");
            }
        }
        Command::Coupon { m, n, eps_d } => {
            let p = match eps_d {
                Some(eps) => cover_probability(m, eps, n),
                None => coupon_probability(m, n),
            }
            .map_err(|e| LabError::Config(e.to_string()))?;
            println!("{p}");
        }
        Command::Serve { addr } => {
            let rt = tokio::runtime::Runtime::new()?;
            eprintln!("listening on http://{addr}");
            rt.block_on(estop_supervisor::serve(addr))
                .with_context(|| format!("serving on {addr}"))?;
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<LabError>() {
        Some(LabError::Config(_)) => 2,
        Some(LabError::Infeasible(_)) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
