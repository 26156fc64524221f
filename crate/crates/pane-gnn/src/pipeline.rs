//! The subcommands as library functions. Each reads and writes files only
//! through `formats` and reports failures as `CliError`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use pane_gnn_core::data::{self, BinarizationRule, IdMap, SplitSpec};
use pane_gnn_core::gradcheck::{run_suite, GradCheckConfig, GradCheckReport};
use pane_gnn_core::graph::{Sign, SignedBipartiteGraph, SignedEdge};
use pane_gnn_core::model::{AttentionMode, ModelParams};
use pane_gnn_core::rank::{self, GroundTruth, MetricsReport, RankedList};
use pane_gnn_core::synthetic::{block_dataset, BlockSpec};
use pane_gnn_core::train::{self, EpochRecord, Variant};
use pane_gnn_core::Error as CoreError;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::formats;
use crate::ratings::{load_ratings, RatingFormat};

pub const EDGES_FILE: &str = "edges.tsv";
pub const USERS_FILE: &str = "users.tsv";
pub const ITEMS_FILE: &str = "items.tsv";
pub const TRAIN_FILE: &str = "train.tsv";
pub const TEST_FILE: &str = "test.tsv";
pub const CONFIG_FILE: &str = "config.kv";
pub const LOG_FILE: &str = "train.log";
pub const CHECKPOINT_FILE: &str = "checkpoint.pane";
pub const REPORT_FILE: &str = "report.txt";

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = formats::create(path)?;
    w.write_all(text.as_bytes()).map_err(|e| CliError::io(path, e))?;
    w.flush().map_err(|e| CliError::io(path, e))
}

// ingest

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IngestSummary {
    pub edges: usize,
    pub positive: usize,
    pub users: usize,
    pub items: usize,
}

/// Raw ratings to canonical edges plus id maps in `out_dir`.
pub fn ingest(
    input: &Path,
    format: &RatingFormat,
    rule: BinarizationRule,
    min_interactions: Option<usize>,
    out_dir: &Path,
) -> Result<IngestSummary> {
    let loaded = load_ratings(input, format, min_interactions)?;
    let edges = data::binarize(&loaded.records, rule)?;
    formats::write_edges(&out_dir.join(EDGES_FILE), &edges)?;
    formats::write_id_map(&out_dir.join(USERS_FILE), &loaded.users)?;
    formats::write_id_map(&out_dir.join(ITEMS_FILE), &loaded.items)?;
    Ok(IngestSummary {
        edges: edges.len(),
        positive: edges.iter().filter(|e| e.sign == Sign::Positive).count(),
        users: loaded.users.len(),
        items: loaded.items.len(),
    })
}

// split

/// Split an edge file into `train.tsv` and `test.tsv`. With `test_pairs`
/// the listed `(user, item)` pairs form the test side; otherwise a seeded
/// k-fold partition picks fold `fold_index`.
pub fn split(
    edges_path: &Path,
    folds: usize,
    fold_index: usize,
    seed: u64,
    test_pairs: Option<&Path>,
    out_dir: &Path,
) -> Result<(usize, usize)> {
    let edges = formats::read_edges(edges_path)?;
    let spec = match test_pairs {
        Some(p) => SplitSpec::FixedFiles {
            test_pairs: formats::read_edges(p)?.iter().map(|e| (e.user, e.item)).collect(),
        },
        None => SplitSpec::k_fold(folds, fold_index, seed),
    };
    let (train, test) = data::split(&edges, &spec)?;
    formats::write_edges(&out_dir.join(TRAIN_FILE), &train)?;
    formats::write_edges(&out_dir.join(TEST_FILE), &test)?;
    Ok((train.len(), test.len()))
}

// dataset assembly

/// Training graph and test ground truth for a run.
#[derive(Clone, Debug)]
pub struct RunData {
    pub graph: SignedBipartiteGraph,
    /// Liked test items per user.
    pub truth: Option<GroundTruth>,
    /// Node counts are exact (from id maps) rather than lower bounds.
    pub exact_counts: bool,
}

fn required(path: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
    path.clone()
        .ok_or_else(|| CliError::Config(format!("`{key}` is not set")))
}

fn max_index(edges: &[SignedEdge], f: impl Fn(&SignedEdge) -> u32) -> usize {
    edges.iter().map(|e| f(e) as usize + 1).max().unwrap_or(0)
}

/// Read the edge files named in `config`. Counts come from the id maps when
/// given, otherwise from the largest index seen; `at_least` raises them.
pub fn load_run_data(config: &RunConfig, at_least: Option<(usize, usize)>) -> Result<RunData> {
    let train_path = required(&config.train_edges, "train_edges")?;
    let train_edges = formats::read_edges(&train_path)?;
    let test_edges = config.test_edges.as_deref().map(formats::read_edges).transpose()?;
    let all: Vec<SignedEdge> = train_edges
        .iter()
        .chain(test_edges.iter().flatten())
        .copied()
        .collect();
    let seen = (max_index(&all, |e| e.user), max_index(&all, |e| e.item));
    let mapped = (
        config.user_map.as_deref().map(formats::read_id_map).transpose()?.map(|m| m.len()),
        config.item_map.as_deref().map(formats::read_id_map).transpose()?.map(|m| m.len()),
    );
    let exact_counts = mapped.0.is_some() && mapped.1.is_some();
    let mut n_users = mapped.0.unwrap_or(seen.0);
    let mut n_items = mapped.1.unwrap_or(seen.1);
    if seen.0 > n_users || seen.1 > n_items {
        return Err(CliError::Core(CoreError::Shape {
            what: "edge indices vs id maps (users x items)",
            expected: (n_users, n_items),
            found: seen,
        }));
    }
    if let Some((u, i)) = at_least.filter(|_| !exact_counts) {
        n_users = n_users.max(u);
        n_items = n_items.max(i);
    }
    let graph = SignedBipartiteGraph::build(&train_edges, n_users, n_items)?;
    let truth = test_edges.map(|t| {
        rank::ground_truth(
            t.iter()
                .filter(|e| e.sign == Sign::Positive)
                .map(|e| (e.user, e.item)),
        )
    });
    Ok(RunData {
        graph,
        truth,
        exact_counts,
    })
}

/// Check a checkpoint against the graph it is about to be used with.
fn check_dims(params: &ModelParams<f32>, data: &RunData) -> Result<()> {
    let graph = (data.graph.n_users(), data.graph.n_items());
    let ckpt = (params.n_users, params.n_items);
    if graph != ckpt {
        return Err(CliError::Core(CoreError::Shape {
            what: "checkpoint users x items",
            expected: graph,
            found: ckpt,
        }));
    }
    Ok(())
}

/// Graph sized to match `params` plus the test truth.
pub fn load_for_checkpoint(config: &RunConfig, params: &ModelParams<f32>) -> Result<RunData> {
    let data = load_run_data(config, Some((params.n_users, params.n_items)))?;
    check_dims(params, &data)?;
    Ok(data)
}

// train

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub final_loss: Option<f64>,
    pub report: Option<MetricsReport>,
    pub params: ModelParams<f32>,
}

/// Train from `config`, persisting config, log, checkpoints and (with test
/// edges) the metric report under `config.out_dir`.
pub fn train(config: &RunConfig) -> Result<TrainSummary> {
    config.validate()?;
    let train_path = required(&config.train_edges, "train_edges")?;
    if !train_path.is_file() {
        return Err(CliError::io(
            &train_path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "edge file not found"),
        ));
    }
    let data = load_run_data(config, None)?;
    let out = &config.out_dir;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    write_text(&out.join(CONFIG_FILE), &config.to_kv())?;

    let log_path = out.join(LOG_FILE);
    let mut log = formats::create(&log_path)?;
    writeln!(log, "{}", formats::LOG_HEADER).map_err(|e| CliError::io(&log_path, e))?;
    let start = Instant::now();
    let mut deferred: Option<CliError> = None;
    let every = config.checkpoint_every;
    let mut observer = |r: &EpochRecord, p: &ModelParams<f32>| {
        if deferred.is_some() {
            return;
        }
        let line = formats::log_line(r, start.elapsed().as_millis());
        log::info!("{line}");
        let mut res = writeln!(log, "{line}").map_err(|e| CliError::io(&log_path, e));
        if res.is_ok() && every > 0 && (r.epoch + 1).is_multiple_of(every) {
            res = formats::write_checkpoint(&out.join(format!("checkpoint-epoch{}.pane", r.epoch + 1)), p);
        }
        if let Err(e) = res {
            deferred = Some(e);
        }
    };
    let outcome = train::train::<f32>(&data.graph, &config.hp, &config.train_options(), &mut observer);
    if let Some(e) = deferred {
        return Err(e);
    }
    log.flush().map_err(|e| CliError::io(&log_path, e))?;
    let outcome = outcome?;
    formats::write_checkpoint(&out.join(CHECKPOINT_FILE), &outcome.params)?;

    let report = match &data.truth {
        Some(truth) => {
            let r = evaluate_params(config, &outcome.params, &data.graph, truth)?;
            write_text(&out.join(REPORT_FILE), &formats::format_report(&r))?;
            Some(r)
        }
        None => None,
    };
    Ok(TrainSummary {
        epochs_run: outcome.log.len(),
        stopped_early: outcome.stopped_early,
        final_loss: outcome.log.last().map(|r| r.loss.total),
        report,
        params: outcome.params,
    })
}

// evaluate

/// Metrics of `params` on `truth`, ranking against `graph`.
pub fn evaluate_params(
    config: &RunConfig,
    params: &ModelParams<f32>,
    graph: &SignedBipartiteGraph,
    truth: &GroundTruth,
) -> Result<MetricsReport> {
    let emb = train::embed(params, graph, config.variant, config.hp.layers, config.attention)?;
    let disinterest = emb
        .disinterest
        .as_ref()
        .ok_or(CoreError::MissingIntermediate("disinterest embeddings"))?;
    Ok(rank::evaluate(
        &emb.interest,
        disinterest,
        graph,
        truth,
        &config.ks,
        config.ranking_filter(),
        config.metric_options(),
    )?)
}

pub fn evaluate(config: &RunConfig, checkpoint: &Path) -> Result<MetricsReport> {
    if config.ks.is_empty() {
        return Err(CliError::Config("`ks` must list at least one cutoff".into()));
    }
    let params = formats::read_checkpoint(checkpoint)?;
    let data = load_for_checkpoint(config, &params)?;
    let truth = data
        .truth
        .ok_or_else(|| CliError::Config("`test_edges` is not set".into()))?;
    evaluate_params(config, &params, &data.graph, &truth)
}

// recommend

/// Which users to rank: raw ids resolved through the user map, or dense
/// indices when no map is configured.
pub fn resolve_users(config: &RunConfig, users: &[String], n_users: usize) -> Result<Vec<u32>> {
    let map: Option<IdMap<String>> = config.user_map.as_deref().map(formats::read_id_map).transpose()?;
    let mut out = Vec::new();
    let mut unknown = Vec::new();
    for u in users {
        let idx = match &map {
            Some(m) => m.get(u),
            None => u.parse::<u32>().ok().filter(|&i| (i as usize) < n_users),
        };
        match idx {
            Some(i) => out.push(i),
            None => unknown.push(u.clone()),
        }
    }
    if !unknown.is_empty() {
        return Err(CliError::UnknownIds {
            what: "user",
            ids: unknown,
        });
    }
    Ok(out)
}

/// Top-`k` lists for `users` (every user when empty) written to `out`.
pub fn recommend(
    config: &RunConfig,
    checkpoint: &Path,
    users: &[String],
    k: usize,
    out: &Path,
) -> Result<BTreeMap<u32, RankedList>> {
    if k == 0 {
        return Err(CliError::Config("recommendation length must be at least 1".into()));
    }
    let params = formats::read_checkpoint(checkpoint)?;
    let data = load_for_checkpoint(config, &params)?;
    let ids: Vec<u32> = if users.is_empty() {
        (0..params.n_users as u32).collect()
    } else {
        resolve_users(config, users, params.n_users)?
    };
    let emb = train::embed(&params, &data.graph, config.variant, config.hp.layers, config.attention)?;
    let disinterest = emb
        .disinterest
        .as_ref()
        .ok_or(CoreError::MissingIntermediate("disinterest embeddings"))?;
    let lists = rank::recommend_users(ids, &emb.interest, disinterest, &data.graph, k, config.ranking_filter())?;
    formats::write_recommendations(out, &lists)?;
    Ok(lists)
}

// sweep

/// Keys a sweep grid may vary.
pub const SWEEP_KEYS: &[&str] = &["layers", "b", "p", "delta", "lambda1", "lambda2", "tau", "dim"];

/// `key=v1,v2,...`
pub fn parse_grid_axis(spec: &str) -> Result<(String, Vec<String>)> {
    let (key, values) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("grid axis must be key=v1,v2,..., got `{spec}`")))?;
    let key = key.trim();
    if !SWEEP_KEYS.contains(&key) {
        return Err(CliError::Config(format!(
            "cannot sweep `{key}`; sweepable keys: {}",
            SWEEP_KEYS.join(", ")
        )));
    }
    let values: Vec<String> = values
        .split(',')
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect();
    Ok((key.to_string(), values))
}

/// Cartesian product of the axes, first axis slowest. No axes, or any axis
/// without values, gives no points.
pub fn grid_points(axes: &[(String, Vec<String>)]) -> Vec<Vec<(String, String)>> {
    if axes.is_empty() {
        return Vec::new();
    }
    let mut points = vec![Vec::new()];
    for (key, values) in axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q: Vec<(String, String)> = p.clone();
                    q.push((key.clone(), v.clone()));
                    q
                })
            })
            .collect();
    }
    points
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub point: Vec<(String, String)>,
    pub outcome: std::result::Result<MetricsReport, String>,
}

/// Train and evaluate every grid point, each in its own subdirectory of
/// `config.out_dir`, appending one row per point to `table`.
pub fn sweep(config: &RunConfig, axes: &[(String, Vec<String>)], table: &Path) -> Result<Vec<SweepRow>> {
    if config.test_edges.is_none() {
        return Err(CliError::Config("sweep needs `test_edges`".into()));
    }
    let mut header = String::from("point");
    for (k, _) in axes {
        let _ = write!(header, "\t{k}");
    }
    for name in ["precision", "recall", "ndcg"] {
        for k in &config.ks {
            let _ = write!(header, "\t{name}@{k}");
        }
    }
    header.push_str("\tstatus");
    let mut w = formats::create(table)?;
    writeln!(w, "{header}").map_err(|e| CliError::io(table, e))?;

    let mut rows = Vec::new();
    for (idx, point) in grid_points(axes).into_iter().enumerate() {
        let outcome = run_point(config, &point, idx);
        let mut line = idx.to_string();
        for (_, v) in &point {
            let _ = write!(line, "\t{v}");
        }
        match &outcome {
            Ok(r) => {
                let metrics: [fn(&rank::MetricsAtK) -> f64; 3] = [|m| m.precision, |m| m.recall, |m| m.ndcg];
                for m in metrics {
                    for at in &r.at {
                        let _ = write!(line, "\t{:.6}", m(at));
                    }
                }
                line.push_str("\tok");
            }
            Err(msg) => {
                log::warn!("sweep point {idx} failed: {msg}");
                for _ in 0..3 * config.ks.len() {
                    line.push_str("\tNA");
                }
                let _ = write!(line, "\terror: {}", msg.replace(['\t', '\n'], " "));
            }
        }
        writeln!(w, "{line}").map_err(|e| CliError::io(table, e))?;
        w.flush().map_err(|e| CliError::io(table, e))?;
        rows.push(SweepRow { point, outcome });
    }
    Ok(rows)
}

fn run_point(config: &RunConfig, point: &[(String, String)], idx: usize) -> std::result::Result<MetricsReport, String> {
    let mut c = config.clone();
    for (k, v) in point {
        c.set(k, v).map_err(|e| e.to_string())?;
    }
    c.out_dir = config.out_dir.join(format!("point-{idx}"));
    let summary = train(&c).map_err(|e| format!("[{}] {e}", e.category()))?;
    summary.report.ok_or_else(|| "no report produced".to_string())
}

// gradcheck

pub fn gradcheck(
    cases: usize,
    seed: u64,
    step: f64,
    variant: Variant,
    attention: AttentionMode,
) -> Result<GradCheckReport> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(CliError::Config(format!("step must be positive, got {step}")));
    }
    let config = GradCheckConfig {
        step,
        attention,
        ..GradCheckConfig::for_variant(variant)
    };
    Ok(run_suite(&config, cases, seed)?)
}

// synthetic data

/// Write the block dataset as `train.tsv` (signed) and `test.tsv`
/// (held-out positives).
pub fn synth(spec: BlockSpec, out_dir: &Path) -> Result<(usize, usize)> {
    let data = block_dataset(spec)?;
    let test: Vec<SignedEdge> = data
        .test
        .iter()
        .flat_map(|(&user, items)| {
            items.iter().map(move |&item| SignedEdge {
                user,
                item,
                sign: Sign::Positive,
            })
        })
        .collect();
    formats::write_edges(&out_dir.join(TRAIN_FILE), &data.train_edges)?;
    formats::write_edges(&out_dir.join(TEST_FILE), &test)?;
    Ok((data.train_edges.len(), test.len()))
}

/// Items of `lists` that were not backfilled, per user.
pub fn kept_items(lists: &BTreeMap<u32, RankedList>) -> BTreeMap<u32, BTreeSet<u32>> {
    lists
        .iter()
        .map(|(&u, l)| {
            (
                u,
                l.items.iter().filter(|e| !e.backfilled).map(|e| e.scored.item).collect(),
            )
        })
        .collect()
}
