//! Command-line front end: train, cotrain, eval, sweep, report.
//!
//! Exit codes: 0 on success, 1 for configuration/usage problems, 2 for
//! runtime failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use moralsim_core::config;
use moralsim_core::eval::{
    eval_report_to_csv, eval_steps_to_csv, permutation_probe, EvalAgent, EvalProtocol, EvalReport,
    PolicyAgent, RegretNorm,
};
use moralsim_core::game::BUILTIN_GAMES;
use moralsim_core::opponents::OpponentStrategy;
use moralsim_core::policy::Policy;
use moralsim_core::report::{render_report, Bar, ReportFormat, ReportSpec};
use moralsim_core::sweep::{run_sweep, SweepSpec};
use moralsim_core::trainer::{run_cotraining, run_training, GameRef};
use moralsim_core::CoreError;
use moralsim_gateway::client::{EndpointConfig, GatewayClient, GatewayError};
use moralsim_gateway::RemoteAgent;

#[derive(Parser)]
#[command(
    name = "moralsim",
    about = "Iterated 2x2 matrix games with intrinsic moral rewards: training, evaluation, sweeps, reports"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train two learners against each other.
    Cotrain {
        #[arg(long)]
        config_a: PathBuf,
        #[arg(long)]
        config_b: PathBuf,
        #[arg(long)]
        out_a: Option<PathBuf>,
        #[arg(long)]
        out_b: Option<PathBuf>,
    },
    /// Evaluate a frozen policy file or a remote endpoint.
    Eval {
        /// Policy table produced by training.
        #[arg(long, conflicts_with = "endpoint")]
        policy: Option<PathBuf>,
        /// Endpoint config file (base_url, model, ...).
        #[arg(long)]
        endpoint: Option<PathBuf>,
        /// Comma-separated game list; defaults to all built-ins.
        #[arg(long)]
        games: Option<String>,
        /// Reverse which token means which action at test time.
        #[arg(long)]
        swap_tokens: bool,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        episodes: u32,
        #[arg(long, default_value_t = 5)]
        steps: u32,
        /// Fixed opponent strategy: tft, ac, ad, random.
        #[arg(long, default_value = "random")]
        opponent: String,
        /// Token meaning Cooperate at test time.
        #[arg(long, default_value = "action3")]
        c_token: String,
        /// Token meaning Defect at test time.
        #[arg(long, default_value = "action4")]
        d_token: String,
        /// Normalize regret by the per-state spread instead of per-game.
        #[arg(long)]
        per_state_regret: bool,
        /// Where to write eval_report.csv and charts; defaults to the
        /// policy's directory (or the working directory for endpoints).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Label for the run_id column.
        #[arg(long)]
        run_id: Option<String>,
        /// Label for the trained_kind column; defaults to the reward name
        /// found in the run's config.txt when evaluating a policy.
        #[arg(long)]
        trained_kind: Option<String>,
    },
    /// Run every cell of a sweep spec.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 4)]
        workers: usize,
    },
    /// Aggregate run directories into curves, tables, and charts.
    Report {
        /// Directory containing run directories (or a single run directory).
        #[arg(long)]
        runs: PathBuf,
        /// Comma-separated: csv, svg.
        #[arg(long, default_value = "csv,svg")]
        format: String,
        /// Moving-average window for curves.
        #[arg(long, default_value_t = 10)]
        window: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum AppError {
    Validation(String),
    Runtime(String),
}

impl From<CoreError> for AppError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::UnknownGame { .. }
            | CoreError::BadGameTable(_)
            | CoreError::ConfigParse { .. }
            | CoreError::UnknownKey { .. }
            | CoreError::InvalidConfig(_)
            | CoreError::CotrainMismatch(_)
            | CoreError::DegenerateRange { .. } => AppError::Validation(e.to_string()),
            other => AppError::Runtime(other.to_string()),
        }
    }
}

impl From<GatewayError> for AppError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::Config(_) => AppError::Validation(e.to_string()),
            other => AppError::Runtime(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes, bad usage is not.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(AppError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let mut cfg = config::load_config(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            let artifacts = run_training(&cfg)?;
            println!(
                "trained {} episodes (seed {}) -> {}",
                artifacts.episode_metrics.len(),
                artifacts.seed,
                artifacts.output_dir.display()
            );
            if artifacts.non_convergent {
                println!("warning: run flagged non-convergent (no legal tokens late in training)");
            }
            Ok(())
        }
        Command::Cotrain {
            config_a,
            config_b,
            out_a,
            out_b,
        } => {
            let mut cfg_a = config::load_config(&config_a)?;
            let mut cfg_b = config::load_config(&config_b)?;
            if let Some(out) = out_a {
                cfg_a.output_dir = out;
            }
            if let Some(out) = out_b {
                cfg_b.output_dir = out;
            }
            let (arts_a, arts_b) = run_cotraining(&cfg_a, &cfg_b)?;
            println!(
                "co-trained {} episodes -> {} and {}",
                arts_a.episode_metrics.len(),
                arts_a.output_dir.display(),
                arts_b.output_dir.display()
            );
            Ok(())
        }
        Command::Eval {
            policy,
            endpoint,
            games,
            swap_tokens,
            seed,
            episodes,
            steps,
            opponent,
            c_token,
            d_token,
            per_state_regret,
            out,
            run_id,
            trained_kind,
        } => {
            let game_refs: Vec<GameRef> = match games {
                None => BUILTIN_GAMES
                    .iter()
                    .map(|n| GameRef::Builtin((*n).to_string()))
                    .collect(),
                Some(list) => list
                    .split(',')
                    .map(|n| {
                        let n = n.trim();
                        // Custom payoff tables are referenced by path.
                        if n.contains('/') || n.ends_with(".csv") {
                            GameRef::Table(PathBuf::from(n))
                        } else {
                            GameRef::Builtin(n.to_string())
                        }
                    })
                    .collect(),
            };
            let opponent = OpponentStrategy::parse(&opponent).ok_or_else(|| {
                AppError::Validation(format!(
                    "unknown opponent '{opponent}', valid here: tft, ac, ad, random"
                ))
            })?;
            let mut protocol = EvalProtocol::new(game_refs, seed);
            protocol.episodes = episodes;
            protocol.steps_per_episode = steps;
            protocol.opponent = opponent;
            protocol.mapping = moralsim_core::eval::TokenMapping::new(c_token, d_token);
            if per_state_regret {
                protocol.regret_norm = RegretNorm::PerState;
            }

            let (report, out_dir, run_id, trained_kind) = match (&policy, &endpoint) {
                (Some(path), None) => {
                    let loaded = Policy::load(path)?;
                    let mut agent = PolicyAgent::new(&loaded, seed.wrapping_add(1));
                    let report = run_probe(&mut agent, &protocol, swap_tokens)?;
                    let parent = path.parent().unwrap_or(Path::new(".")).to_path_buf();
                    let run_id = run_id.unwrap_or_else(|| {
                        parent
                            .file_name()
                            .map(|s| s.to_string_lossy().into_owned())
                            .unwrap_or_else(|| "run".into())
                    });
                    let trained_kind = trained_kind.unwrap_or_else(|| kind_from_run_dir(&parent));
                    (report, out.unwrap_or(parent), run_id, trained_kind)
                }
                (None, Some(path)) => {
                    let text = std::fs::read_to_string(path).map_err(|e| {
                        AppError::Runtime(format!("reading {}: {e}", path.display()))
                    })?;
                    let cfg = EndpointConfig::from_kv(&path.display().to_string(), &text)?;
                    let model = cfg.model.clone();
                    let mut agent = RemoteAgent::new(GatewayClient::new(cfg)?);
                    let report = run_probe(&mut agent, &protocol, swap_tokens)?;
                    (
                        report,
                        out.unwrap_or_else(|| PathBuf::from(".")),
                        run_id.unwrap_or(model),
                        trained_kind.unwrap_or_else(|| "remote".into()),
                    )
                }
                _ => {
                    return Err(AppError::Validation(
                        "give exactly one of --policy or --endpoint".into(),
                    ))
                }
            };

            std::fs::create_dir_all(&out_dir)
                .map_err(|e| AppError::Runtime(format!("creating {}: {e}", out_dir.display())))?;
            let csv = eval_report_to_csv(&report, &run_id, &trained_kind);
            let csv_path = out_dir.join("eval_report.csv");
            std::fs::write(&csv_path, &csv)
                .map_err(|e| AppError::Runtime(format!("writing {}: {e}", csv_path.display())))?;
            let steps_path = out_dir.join("eval_steps.csv");
            std::fs::write(&steps_path, eval_steps_to_csv(&report.steps))
                .map_err(|e| AppError::Runtime(format!("writing {}: {e}", steps_path.display())))?;
            write_eval_charts(&report, &out_dir)?;

            for g in &report.games {
                println!(
                    "{:<22} regret(deont)={:.3} regret(util)={:.3} illegal={:.3} reciprocity={:.3}",
                    g.game,
                    g.regret_deontological.mean,
                    g.regret_utilitarian.mean,
                    g.illegal_rate,
                    g.reciprocity
                );
            }
            println!("wrote {}", csv_path.display());
            Ok(())
        }
        Command::Sweep { spec, workers } => {
            let spec = SweepSpec::load(&spec)?;
            let outcome = run_sweep(&spec, workers)?;
            let failed = outcome.failed();
            println!(
                "{} cells, {} failed -> {}",
                outcome.cells.len(),
                failed,
                outcome.summary_path.display()
            );
            for cell in outcome.cells.iter().filter(|c| c.error.is_some()) {
                println!(
                    "  failed: {} ({})",
                    cell.name,
                    cell.error.as_deref().unwrap()
                );
            }
            if failed > 0 {
                return Err(AppError::Runtime(format!("{failed} sweep cells failed")));
            }
            Ok(())
        }
        Command::Report {
            runs,
            format,
            window,
            out,
        } => {
            let formats = ReportFormat::parse_list(&format)?;
            let run_dirs = discover_run_dirs(&runs)?;
            if run_dirs.is_empty() {
                return Err(AppError::Validation(format!(
                    "no run directories (config.txt + episode_metrics.csv) under {}",
                    runs.display()
                )));
            }
            let out_dir = out.unwrap_or_else(|| runs.join("report"));
            let files = render_report(&ReportSpec {
                run_dirs,
                formats,
                window,
                out_dir,
            })?;
            for f in &files {
                println!("wrote {}", f.display());
            }
            Ok(())
        }
    }
}

fn run_probe(
    agent: &mut dyn EvalAgent,
    protocol: &EvalProtocol,
    swapped: bool,
) -> Result<EvalReport, AppError> {
    Ok(permutation_probe(agent, protocol, swapped)?)
}

/// Reward label from a run directory's config echo, if present.
fn kind_from_run_dir(dir: &Path) -> String {
    std::fs::read_to_string(dir.join("config.txt"))
        .ok()
        .and_then(|text| {
            config::run_config_from_str("config.txt", &text)
                .ok()
                .map(|cfg| config::reward_label(&cfg.schedule))
        })
        .unwrap_or_else(|| "unknown".into())
}

/// A run directory holds config.txt and episode_metrics.csv; accept either a
/// directory of runs or a single run.
fn discover_run_dirs(root: &Path) -> Result<Vec<PathBuf>, AppError> {
    let is_run = |p: &Path| p.join("config.txt").exists() && p.join("episode_metrics.csv").exists();
    if is_run(root) {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs = Vec::new();
    let entries = std::fs::read_dir(root)
        .map_err(|e| AppError::Runtime(format!("reading {}: {e}", root.display())))?;
    for entry in entries {
        let entry = entry.map_err(|e| AppError::Runtime(e.to_string()))?;
        let path = entry.path();
        if path.is_dir() {
            if is_run(&path) {
                dirs.push(path);
            } else {
                // One level deeper covers cotraining pairs (agent_a/agent_b).
                for sub in std::fs::read_dir(&path)
                    .map_err(|e| AppError::Runtime(e.to_string()))?
                    .flatten()
                {
                    let sub = sub.path();
                    if sub.is_dir() && is_run(&sub) {
                        dirs.push(sub);
                    }
                }
            }
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// Bar charts per metric family next to the CSV.
fn write_eval_charts(report: &EvalReport, out_dir: &Path) -> Result<(), AppError> {
    use moralsim_core::report::svg_bar_chart;

    let regret_bars: Vec<Bar> = report
        .games
        .iter()
        .flat_map(|g| {
            [
                Bar {
                    label: format!("{}/deont", g.game),
                    value: g.regret_deontological.mean,
                    ci_low: g.regret_deontological.ci_low,
                    ci_high: g.regret_deontological.ci_high,
                },
                Bar {
                    label: format!("{}/util", g.game),
                    value: g.regret_utilitarian.mean,
                    ci_low: g.regret_utilitarian.ci_low,
                    ci_high: g.regret_utilitarian.ci_high,
                },
            ]
        })
        .collect();

    let mut freq_bars: Vec<Bar> = Vec::new();
    for g in &report.games {
        for (label, row) in [("C", g.breakdown.after_c), ("D", g.breakdown.after_d)] {
            if let Some(row) = row {
                freq_bars.push(Bar {
                    label: format!("{} P(C|{label})", g.game),
                    value: row.p_c,
                    ci_low: row.p_c,
                    ci_high: row.p_c,
                });
            }
        }
    }

    let rate_bars: Vec<Bar> = report
        .games
        .iter()
        .flat_map(|g| {
            [
                Bar {
                    label: format!("{} illegal", g.game),
                    value: g.illegal_rate,
                    ci_low: g.illegal_rate,
                    ci_high: g.illegal_rate,
                },
                Bar {
                    label: format!("{} recip", g.game),
                    value: g.reciprocity,
                    ci_low: g.reciprocity,
                    ci_high: g.reciprocity,
                },
            ]
        })
        .collect();

    for (name, title, bars) in [
        ("eval_regret.svg", "normalized moral regret", regret_bars),
        (
            "eval_conditional_frequencies.svg",
            "P(C | previous move)",
            freq_bars,
        ),
        ("eval_rates.svg", "illegal and reciprocity rates", rate_bars),
    ] {
        let path = out_dir.join(name);
        std::fs::write(&path, svg_bar_chart(title, &bars))
            .map_err(|e| AppError::Runtime(format!("writing {}: {e}", path.display())))?;
    }
    Ok(())
}
