//! Command-line front end: validate games, compute gaps, run learners, generate games.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use kefce::bench::{
    containment_game, containment_mixture, kuhn_poker, nfce_example, random_game, run_experiment, ExperimentConfig,
    GameSource, RandomGameParams, DEFAULT_THIN,
};
use kefce::eval::{kefce_gap, nfcce_gap, trigger_gap};
use kefce::kefr::Feedback;
use kefce::policy::{CorrelatedJson, CorrelatedPolicy};
use kefce::TreeGame;

#[derive(Parser)]
#[command(name = "kefce", version, about = "K-deviation correlated equilibria in tree games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a game file and print its digest.
    Validate { game: PathBuf },
    /// Exact K-EFCE gaps of a correlated policy.
    Gaps(GapsArgs),
    /// Run a learner and write gap checkpoints as CSV.
    Learn(LearnArgs),
    /// Write a generated game as JSON.
    Gen(GenArgs),
}

#[derive(Args)]
struct GapsArgs {
    game: PathBuf,
    #[arg(long)]
    policy: PathBuf,
    #[arg(long = "K", value_delimiter = ',', required = true)]
    k: Vec<usize>,
    /// Also print the trigger and NFCCE gaps.
    #[arg(long)]
    extra: bool,
    /// Embed the arg-max modification in each report.
    #[arg(long)]
    full: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Full,
    Bandit,
}

#[derive(Args)]
struct LearnArgs {
    #[arg(long)]
    game: PathBuf,
    #[arg(long, value_enum, default_value = "full")]
    mode: Mode,
    #[arg(long = "K", value_delimiter = ',', required = true)]
    k: Vec<usize>,
    #[arg(long = "T")]
    t: usize,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seed: Vec<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Failure probability in the bandit learning rate.
    #[arg(long, default_value_t = 0.1)]
    p: f64,
    /// Per-player learning rates, overriding the default formula.
    #[arg(long, value_delimiter = ',')]
    eta: Option<Vec<f64>>,
    /// Maximum mixture size per gap evaluation.
    #[arg(long, default_value_t = DEFAULT_THIN)]
    thin: usize,
    /// Fill the wall_ms column (reruns are then no longer byte-identical).
    #[arg(long)]
    wall_time: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Containment,
    Nfce,
    Kuhn,
    Random,
}

#[derive(Args)]
struct GenArgs {
    kind: GenKind,
    /// Deviation budget of the containment game.
    #[arg(long = "K", default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    players: usize,
    #[arg(long, default_value_t = 2)]
    horizon: usize,
    #[arg(long, default_value_t = 2)]
    actions: usize,
    #[arg(long, default_value_t = 2)]
    initial_states: usize,
    #[arg(long, default_value_t = 1)]
    max_branch: usize,
    #[arg(long, default_value_t = 0.5)]
    merge_prob: f64,
    /// Game output file (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Where to write the accompanying correlated policy (containment, nfce).
    #[arg(long)]
    policy_out: Option<PathBuf>,
}

fn load_game(path: &Path) -> Result<TreeGame> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    TreeGame::from_json(&text).with_context(|| format!("loading {}", path.display()))
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn gaps(args: GapsArgs) -> Result<()> {
    let game = load_game(&args.game)?;
    let text = std::fs::read_to_string(&args.policy).with_context(|| format!("reading {}", args.policy.display()))?;
    let json: CorrelatedJson = serde_json::from_str(&text).context("parsing the correlated policy")?;
    let mix = CorrelatedPolicy::from_json(&game, &json)?;
    for &k in &args.k {
        let report = kefce_gap(&game, &mix, k)?;
        let line = serde_json::json!({ "K": k, "report": report.to_json(&game, args.full) });
        println!("{line}");
    }
    if args.extra {
        let line = serde_json::json!({ "trigger_gap": trigger_gap(&game, &mix), "nfcce_gap": nfcce_gap(&game, &mix) });
        println!("{line}");
    }
    Ok(())
}

fn learn(args: LearnArgs) -> Result<()> {
    let feedback = match args.mode {
        Mode::Full => Feedback::Full,
        Mode::Bandit => Feedback::Bandit,
    };
    let mut cfg = ExperimentConfig::new(GameSource::File(args.game), args.k, args.t, feedback, args.out.clone());
    cfg.seeds = args.seed;
    cfg.p = args.p;
    cfg.eta = args.eta;
    cfg.thin = args.thin;
    cfg.record_wall_time = args.wall_time;
    let rows = run_experiment(&cfg)?;
    eprintln!("wrote {} rows to {}", rows.len(), args.out.display());
    Ok(())
}

fn gen(args: GenArgs) -> Result<()> {
    let (game, mix) = match args.kind {
        GenKind::Containment => {
            let g = containment_game(args.k)?;
            let m = containment_mixture(&g)?;
            (g, Some(m))
        }
        GenKind::Nfce => {
            let (g, m) = nfce_example()?;
            (g, Some(m))
        }
        GenKind::Kuhn => (kuhn_poker()?, None),
        GenKind::Random => {
            let params = RandomGameParams {
                players: args.players,
                horizon: args.horizon,
                actions: args.actions,
                initial_states: args.initial_states,
                max_branch: args.max_branch,
                merge_prob: args.merge_prob,
            };
            (random_game(args.seed, &params)?, None)
        }
    };
    write_out(args.out.as_deref(), &game.to_json())?;
    match (args.policy_out, mix) {
        (Some(path), Some(mix)) => write_out(Some(&path), &serde_json::to_string_pretty(&mix.to_json(&game))?),
        (Some(_), None) => bail!("this generator has no accompanying policy"),
        _ => Ok(()),
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Validate { game } => {
            let g = load_game(&game)?;
            println!("{}", serde_json::to_string_pretty(&g.digest())?);
        }
        Command::Gaps(args) => gaps(args)?,
        Command::Learn(args) => learn(args)?,
        Command::Gen(args) => gen(args)?,
    }
    Ok(())
}
