use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use resetfree_core::agent::EsCheckpoint;
use resetfree_core::config::{AgentKind, ExperimentConfig};
use resetfree_core::env::ResetFreeEnv;
use resetfree_core::export::{export_traces, ExportFormat};
use resetfree_core::harness::{self, EpisodeRow, RunOptions, RunSummary};
use resetfree_core::protocol::{ReplayScript, Session};
use resetfree_core::record::EpisodeRecord;

#[derive(Parser)]
#[command(
    name = "resetfree",
    version,
    about = "Reset-free agile driving experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured agent with the reset-free loop.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the non-learning planner baseline.
    Baseline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Zero and ES agents with w_b 0 and 1, plus the baseline.
    Matrix {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Expose the environment to an external learner over TCP.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: String,
        /// Answer from a recorded episode (JSONL) instead of simulating.
        #[arg(long)]
        replay: Option<PathBuf>,
    },
    /// Run a saved ES policy without updates.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write trajectories and track boundaries from a records directory.
    Export {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, default_value = "csv")]
        format: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Drive a running server with a constant action and print the returns.
    Client {
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: String,
        #[arg(long, default_value_t = 5)]
        episodes: usize,
        #[arg(long, num_args = 2, default_values_t = [0.0, 0.0], allow_negative_numbers = true)]
        action: Vec<f64>,
    },
}

fn load(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<ExperimentConfig> {
    let mut cfg =
        ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = seed {
        cfg.run.seed = seed;
    }
    if let Some(out) = out {
        cfg.run.out = out;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn progress<'a>(label: &'a str) -> RunOptions<'a> {
    RunOptions {
        on_episode: Some(Box::new(move |row: &EpisodeRow, _: &EpisodeRecord| {
            log::info!(
                "{label} ep {:>4}  return {:>8.3}  steps {:>3}  collided {:<5}  reset {}",
                row.episode,
                row.episode_return,
                row.steps,
                row.collided,
                row.reset_steps
            );
        })),
        ..RunOptions::default()
    }
}

fn with_out<'a>(cfg: &ExperimentConfig, opts: RunOptions<'a>) -> RunOptions<'a> {
    RunOptions {
        out: Some(cfg.run.out.clone()),
        write_records: cfg.run.write_records,
        ..opts
    }
}

fn report(name: &str, s: &RunSummary, out: &Path) {
    println!(
        "{name}: {} episodes, final-{} mean {:.3} ± {:.3}, reset timeouts {}, {:.1} s -> {}",
        s.rows.len(),
        harness::FINAL_WINDOW,
        s.final_mean,
        s.final_std,
        s.reset_timeouts,
        s.wall_clock_s,
        out.display()
    );
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train { config, seed, out } => {
            let cfg = load(&config, seed, out)?;
            if cfg.run.agent == AgentKind::External {
                bail!("agent = \"external\" is driven through `serve`");
            }
            let s = harness::run_training(&cfg, with_out(&cfg, progress("train")))?;
            report("train", &s, &cfg.run.out);
        }
        Command::Baseline { config, seed, out } => {
            let cfg = load(&config, seed, out)?;
            let s = harness::run_baseline(&cfg, with_out(&cfg, progress("baseline")))?;
            report("baseline", &s, &cfg.run.out);
        }
        Command::Matrix { config, out } => {
            let cfg = load(&config, None, out)?;
            harness::run_matrix(&cfg, |name, s| report(name, s, &cfg.run.out.join(name)))?;
        }
        Command::Serve {
            config,
            addr,
            replay,
        } => {
            let cfg = load(&config, None, None)?;
            let env = ResetFreeEnv::new(cfg.env_setup()?)?;
            let session = match replay {
                Some(path) => {
                    let record = EpisodeRecord::load(&path)
                        .with_context(|| format!("loading {}", path.display()))?;
                    let script =
                        ReplayScript::new(&record, env.normalizer(), env.config().history)?;
                    Session::replay(script, env.obs_dim())
                }
                None => Session::new(env),
            };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let server = resetfree_server::Server::bind(&addr, session).await?;
                println!("listening on {}", server.local_addr()?);
                server
                    .serve_until(async { tokio::signal::ctrl_c().await.ok().unwrap_or(()) })
                    .await
            })?;
        }
        Command::Eval {
            config,
            checkpoint,
            episodes,
            out,
        } => {
            let cfg = load(&config, None, out)?;
            let ckpt = EsCheckpoint::load(&checkpoint)
                .with_context(|| format!("loading {}", checkpoint.display()))?;
            let n = episodes.unwrap_or(cfg.run.episodes);
            let s = harness::evaluate_policy(&cfg, &ckpt, n, with_out(&cfg, progress("eval")))?;
            report("eval", &s, &cfg.run.out);
        }
        Command::Export {
            records,
            format,
            out,
        } => {
            let format: ExportFormat = format.parse()?;
            for path in export_traces(&records, format, out.as_deref())? {
                println!("wrote {}", path.display());
            }
        }
        Command::Client {
            addr,
            episodes,
            action,
        } => {
            let mut env = resetfree_client::RemoteEnv::connect(&addr)
                .with_context(|| format!("connecting to {addr}"))?;
            println!(
                "connected: obs_dim {} act_dim {}",
                env.obs_dim(),
                env.act_dim()
            );
            let returns =
                resetfree_client::constant_action_run(&mut env, [action[0], action[1]], episodes)?;
            for (i, r) in returns.iter().enumerate() {
                println!("episode {i}: return {r}");
            }
            env.close()?;
        }
    }
    Ok(())
}
