use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pane_gnn::config::{parse_attention, RunConfig};
use pane_gnn::error::{CliError, Result};
use pane_gnn::formats;
use pane_gnn::pipeline;
use pane_gnn::ratings::RatingFormat;
use pane_gnn_core::data::BinarizationRule;
use pane_gnn_core::synthetic::BlockSpec;
use pane_gnn_core::train::Variant;

#[derive(Parser)]
#[command(name = "pane-gnn", version, about = "Signed bipartite graph recommender")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Configuration layers shared by the model subcommands.
#[derive(Args)]
struct ConfigArgs {
    /// key=value configuration file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set b=3`. Repeatable; applied after the file.
    #[arg(short, long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    train_edges: Option<PathBuf>,
    #[arg(long)]
    test_edges: Option<PathBuf>,
    #[arg(long)]
    user_map: Option<PathBuf>,
    #[arg(long)]
    item_map: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// A, B, C, D or full.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Disinterest threshold; `inf` disables the filter.
    #[arg(long)]
    delta: Option<f64>,
    /// Comma-separated cutoffs.
    #[arg(long)]
    ks: Option<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut overrides = self.set.clone();
        let paths = [
            ("train_edges", &self.train_edges),
            ("test_edges", &self.test_edges),
            ("user_map", &self.user_map),
            ("item_map", &self.item_map),
            ("out_dir", &self.out_dir),
        ];
        for (k, v) in paths {
            if let Some(p) = v {
                overrides.push(format!("{k}={}", p.display()));
            }
        }
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                overrides.push(format!("{k}={v}"));
            }
        };
        push("variant", self.variant.clone());
        push("seed", self.seed.map(|s| s.to_string()));
        push("epochs", self.epochs.map(|s| s.to_string()));
        push("delta", self.delta.map(|s| s.to_string()));
        push("ks", self.ks.clone());
        RunConfig::resolve(self.config.as_deref(), &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Convert a raw rating file into canonical edge and id-map files.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// `movielens`, `csv`, or `delim:<sep>:<user>,<item>,<value>[,<ts>]`.
        #[arg(long, default_value = "movielens")]
        format: String,
        /// `stars` or `watch-ratio`.
        #[arg(long, default_value = "stars")]
        rule: String,
        /// Override the rule's default threshold.
        #[arg(long)]
        threshold: Option<f64>,
        /// Drop users and items with fewer interactions.
        #[arg(long)]
        min_interactions: Option<usize>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Split an edge file into train.tsv and test.tsv.
    Split {
        #[arg(long)]
        edges: PathBuf,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        fold_index: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Edge file whose (user, item) pairs form the test set.
        #[arg(long)]
        test_pairs: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train a model and persist config, log, checkpoints and report.
    Train(ConfigArgs),
    /// Score a checkpoint on held-out edges.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also write the report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write top-k lists for some or all users.
    Recommend {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Raw user ids (dense indices without a user map); all users when empty.
        #[arg(long, value_delimiter = ',')]
        users: Vec<String>,
        #[arg(short = 'k', long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate over a parameter grid.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Axis `key=v1,v2,...`; repeatable.
        #[arg(long)]
        grid: Vec<String>,
        #[arg(long)]
        table: PathBuf,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        cases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-3)]
        step: f64,
        #[arg(long, default_value = "full")]
        variant: String,
        #[arg(long, default_value = "node")]
        attention: String,
        /// Fail when the maximum relative error reaches this value.
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Write the two-block synthetic dataset.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 100)]
        users_per_block: usize,
        #[arg(long, default_value_t = 200)]
        items_per_block: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest {
            input,
            format,
            rule,
            threshold,
            min_interactions,
            out_dir,
        } => {
            let format = RatingFormat::parse(&format)?;
            let mut rule = match rule.as_str() {
                "stars" => BinarizationRule::stars(),
                "watch-ratio" => BinarizationRule::watch_ratio(),
                r => return Err(CliError::Config(format!("unknown rule `{r}`; expected stars or watch-ratio"))),
            };
            if let Some(t) = threshold {
                rule = match rule {
                    BinarizationRule::StarThreshold(_) => BinarizationRule::StarThreshold(t),
                    BinarizationRule::WatchRatioThreshold(_) => BinarizationRule::WatchRatioThreshold(t),
                };
            }
            let s = pipeline::ingest(&input, &format, rule, min_interactions, &out_dir)?;
            println!(
                "edges={} positive={} users={} items={}",
                s.edges, s.positive, s.users, s.items
            );
        }
        Command::Split {
            edges,
            folds,
            fold_index,
            seed,
            test_pairs,
            out_dir,
        } => {
            let (train, test) = pipeline::split(&edges, folds, fold_index, seed, test_pairs.as_deref(), &out_dir)?;
            println!("train={train} test={test}");
        }
        Command::Train(args) => {
            let config = args.resolve()?;
            let s = pipeline::train(&config)?;
            println!(
                "epochs={} stopped_early={} final_loss={}",
                s.epochs_run,
                s.stopped_early,
                s.final_loss.map_or("NA".into(), |l| format!("{l:.6}"))
            );
            if let Some(r) = s.report {
                print!("{}", formats::format_report(&r));
            }
        }
        Command::Evaluate {
            config,
            checkpoint,
            report,
        } => {
            let config = config.resolve()?;
            let text = formats::format_report(&pipeline::evaluate(&config, &checkpoint)?);
            if let Some(p) = report {
                std::fs::write(&p, &text).map_err(|e| CliError::io(&p, e))?;
            }
            print!("{text}");
        }
        Command::Recommend {
            config,
            checkpoint,
            users,
            k,
            out,
        } => {
            let config = config.resolve()?;
            let lists = pipeline::recommend(&config, &checkpoint, &users, k, &out)?;
            let rows: usize = lists.values().map(|l| l.items.len()).sum();
            println!("users={} rows={rows}", lists.len());
        }
        Command::Sweep { config, grid, table } => {
            let config = config.resolve()?;
            let axes = grid
                .iter()
                .map(|g| pipeline::parse_grid_axis(g))
                .collect::<Result<Vec<_>>>()?;
            let rows = pipeline::sweep(&config, &axes, &table)?;
            let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
            println!("points={} failed={failed}", rows.len());
        }
        Command::Gradcheck {
            cases,
            seed,
            step,
            variant,
            attention,
            tolerance,
        } => {
            let variant = Variant::parse(&variant)
                .ok_or_else(|| CliError::Config(format!("unknown variant `{variant}`")))?;
            let attention = parse_attention(&attention)
                .ok_or_else(|| CliError::Config(format!("unknown attention mode `{attention}`")))?;
            let r = pipeline::gradcheck(cases, seed, step, variant, attention)?;
            println!(
                "cases={cases} coordinates={} rejected={} max_rel_error={:.3e}",
                r.coordinates,
                r.rejected,
                r.max_rel_error()
            );
            if let Some(w) = r.worst {
                println!(
                    "worst: {}[{}] analytic={:.9e} numeric={:.9e}",
                    w.tensor.name(),
                    w.index,
                    w.analytic,
                    w.numeric
                );
            }
            if let Some(tol) = tolerance.filter(|&t| r.max_rel_error() >= t) {
                return Err(CliError::Usage(format!(
                    "gradient check failed: max relative error {:.3e} >= {tol:.3e}",
                    r.max_rel_error()
                )));
            }
        }
        Command::Synth {
            out_dir,
            users_per_block,
            items_per_block,
            seed,
        } => {
            let spec = BlockSpec {
                users_per_block,
                items_per_block,
                seed,
                ..BlockSpec::default()
            };
            let (train, test) = pipeline::synth(spec, &out_dir)?;
            println!("train={train} test={test}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.category());
            ExitCode::FAILURE
        }
    }
}
