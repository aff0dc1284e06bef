//! `weic`: scenario generation, solver runs, sweeps and the env service.
//!
//! Every subcommand writes JSON (or CSV for sweeps) to stdout or `--out-dir`
//! and exits nonzero on error. Flags can also come from `WEIC_*` variables.

use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::json;

use weic_core::channel::{sample_channels, ChannelSet};
use weic_core::eic::{ActionTable, EicPlan, RoundAction};
use weic_core::joint::{evaluate_plan, exhaustive_search, sequential_optimize, JointParams};
use weic_core::service::{serve_stdio, serve_tcp, Service, ServiceConfig};
use weic_core::sweep::{run_sweep, Method, SweepConfig, SweepKind};
use weic_core::{generate_scenario, Scenario, SystemConfig};

#[derive(Parser)]
#[command(name = "weic", version, about = "Joint embedded index coding and multicast beamforming")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolveMethod {
    Exhaustive,
    Sequential,
}

#[derive(clap::Args)]
struct InstanceArgs {
    #[arg(long, env = "WEIC_SEED", default_value_t = 0)]
    seed: u64,
    /// System configuration JSON; missing keys take defaults.
    #[arg(long, env = "WEIC_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, env = "WEIC_FILES_PER_USER", default_value_t = 4.0)]
    files_per_user: f64,
    /// Scenario JSON to use instead of drawing one from `--seed`.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Channel seed; defaults to `--seed`.
    #[arg(long)]
    channel_seed: Option<u64>,
    /// Channel JSON to use instead of drawing from the channel seed.
    #[arg(long)]
    channels: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a scenario and its channels.
    Gen {
        #[command(flatten)]
        inst: InstanceArgs,
        /// Write scenario.json and channels.json here instead of printing.
        #[arg(long, env = "WEIC_OUT_DIR")]
        out_dir: Option<PathBuf>,
    },
    /// Minimum total time by exhaustive search, or the sequential baseline.
    Solve {
        #[command(flatten)]
        inst: InstanceArgs,
        #[arg(long, env = "WEIC_METHOD", value_enum, default_value = "exhaustive")]
        method: SolveMethod,
    },
    /// Total time of a given plan.
    Evaluate {
        #[command(flatten)]
        inst: InstanceArgs,
        /// `{"rounds": [{"blocks": ...}, ...]}` or a bare `[[[...]]]` list.
        #[arg(long)]
        plan: PathBuf,
    },
    /// Run a sweep and write CSV plus a JSON manifest.
    Sweep {
        #[arg(long, env = "WEIC_KIND")]
        kind: Option<SweepKind>,
        /// Sweep configuration JSON; missing keys take defaults.
        #[arg(long, env = "WEIC_CONFIG")]
        config: Option<PathBuf>,
        #[arg(long, env = "WEIC_TRIALS")]
        trials: Option<usize>,
        /// First seed scanned.
        #[arg(long, env = "WEIC_SEED")]
        seed: Option<u64>,
        /// Comma-separated methods.
        #[arg(long, env = "WEIC_METHOD", value_delimiter = ',')]
        method: Option<Vec<Method>>,
        #[arg(long, env = "WEIC_OUT_DIR", default_value = "out")]
        out_dir: PathBuf,
    },
    /// Serve the JSON-lines protocol on stdio or a TCP address.
    Serve {
        /// Service configuration JSON.
        #[arg(long, env = "WEIC_CONFIG")]
        config: Option<PathBuf>,
        /// e.g. 127.0.0.1:7878; stdio when absent.
        #[arg(long, env = "WEIC_TCP")]
        tcp: Option<String>,
    },
    /// Print the universal action table.
    Table {
        #[arg(long, env = "WEIC_CONFIG")]
        config: Option<PathBuf>,
    },
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_or_default<T: DeserializeOwned + Default>(path: Option<&PathBuf>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), |p| read_json(p))
}

fn instance(a: &InstanceArgs) -> Result<(Scenario, ChannelSet)> {
    let scenario = match &a.scenario {
        Some(p) => Scenario::from_json(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => {
            let config: SystemConfig = load_or_default(a.config.as_ref())?;
            generate_scenario(a.seed, config, a.files_per_user)?
        }
    };
    let channels = match &a.channels {
        Some(p) => read_json(p)?,
        None => sample_channels(a.channel_seed.unwrap_or(a.seed), &scenario.config),
    };
    if channels.k() != scenario.k() || channels.nt() != scenario.config.nt {
        bail!("channels do not match the scenario");
    }
    Ok((scenario, channels))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PlanFile {
    Plan(EicPlan),
    Bare(Vec<Vec<Vec<usize>>>),
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { inst, out_dir } => {
            let (scenario, channels) = instance(&inst)?;
            match out_dir {
                Some(dir) => {
                    fs::create_dir_all(&dir)?;
                    let files = [dir.join("scenario.json"), dir.join("channels.json")];
                    fs::write(&files[0], scenario.to_json())?;
                    fs::write(&files[1], serde_json::to_string(&channels)?)?;
                    print_json(&json!({ "files": files }))?;
                }
                None => print_json(&json!({ "scenario": scenario, "channels": channels }))?,
            }
        }
        Command::Solve { inst, method } => {
            let (s, ch) = instance(&inst)?;
            let params = JointParams::default();
            let sol = match method {
                SolveMethod::Exhaustive => exhaustive_search(&s, &ch, &params)?,
                SolveMethod::Sequential => sequential_optimize(&s, &ch, &params)?,
            };
            print_json(&sol)?;
        }
        Command::Evaluate { inst, plan } => {
            let (s, ch) = instance(&inst)?;
            let plan = match read_json::<PlanFile>(&plan)? {
                PlanFile::Plan(p) => p,
                PlanFile::Bare(rounds) => EicPlan::new(rounds.into_iter().map(RoundAction::new).collect()),
            };
            print_json(&evaluate_plan(&s, &ch, &plan, &JointParams::default())?)?;
        }
        Command::Sweep {
            kind,
            config,
            trials,
            seed,
            method,
            out_dir,
        } => {
            let mut cfg: SweepConfig = load_or_default(config.as_ref())?;
            if let Some(k) = kind {
                cfg.kind = k;
            }
            if let Some(t) = trials {
                cfg.trials = t;
            }
            if let Some(s) = seed {
                cfg.seed_base = s;
            }
            if let Some(m) = method {
                cfg.methods = m;
            }
            let out = run_sweep(&cfg)?;
            let files = out.write(&out_dir)?;
            print_json(&json!({ "files": files, "config_sha256": out.manifest.config_sha256 }))?;
        }
        Command::Serve { config, tcp } => {
            let cfg: ServiceConfig = load_or_default(config.as_ref())?;
            cfg.system.validate()?;
            cfg.joint.solver.validate()?;
            let service = Service::new(cfg);
            match tcp {
                Some(addr) => {
                    let listener = TcpListener::bind(&addr).with_context(|| format!("binding {addr}"))?;
                    eprintln!("listening on {}", listener.local_addr()?);
                    serve_tcp(Arc::new(service), listener)?;
                }
                None => serve_stdio(&service)?,
            }
        }
        Command::Table { config } => {
            let c: SystemConfig = load_or_default(config.as_ref())?;
            if c.k < 2 || c.nt == 0 {
                bail!("the table needs K >= 2 and Nt >= 1");
            }
            let table = ActionTable::universal(c.k, c.nt);
            print_json(&json!({ "K": c.k, "Nt": c.nt, "size": table.len(), "entries": table.to_wire() }))?;
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("{}", json!({ "error": format!("{e:#}") }));
        std::process::exit(1);
    }
}
