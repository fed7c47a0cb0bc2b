//! Command-line front end: `train`, `eval`, `oracle` and `export`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;

use crate::algo::{train, LOG_HEADER};
use crate::config::{EnvModel, Resolved, RunConfig};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate_policy, export_cost_distribution, export_policy_heatmap, export_value_curve, policy_heatmap, value_curve,
    write_sidecar, CostSample, EvaluationReport, HeatmapGrid, Sidecar,
};
use crate::net::Checkpoint;
use crate::oracle::{grid_argmin, law_objective, mdp_bracket, oracle_report, AugmentedGraph, NetworkPolicy};
use crate::scoring::Interval;

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_TRAINING: i32 = 4;
pub const EXIT_UNSUPPORTED: i32 = 5;
pub const EXIT_CHECKPOINT: i32 = 6;

/// Environment variable capping the number of worker threads.
pub const THREADS_VAR: &str = "RISKGRAD_THREADS";

#[derive(Debug, Parser)]
#[command(name = "riskgrad", version, about = "Risk-sensitive actor-critic with convex scoring functions")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seeds of the chosen command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides `out` in the config (default `out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train actor and critic; writes the training log and a checkpoint.
    Train,
    /// Evaluate a checkpoint out of sample.
    Eval(EvalArgs),
    /// Exact dynamic programming on a tabular environment.
    Oracle(OracleArgs),
    /// Figure data for one or more checkpoints.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Defaults to `<out>/checkpoint.json`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub n_episodes: Option<usize>,
    /// Deploy the most likely action instead of sampling.
    #[arg(long)]
    pub greedy: bool,
    /// Also write `costs.csv` (histogram) and `costs_quantiles.csv`.
    #[arg(long)]
    pub costs: bool,
    /// Also write `value_curve.csv`.
    #[arg(long)]
    pub value_curve: bool,
    /// Also write `heatmap_t<t>.csv` for every decision time (arbitrage only).
    #[arg(long)]
    pub heatmaps: bool,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Print the optimality gap of this checkpoint's policy.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    #[arg(long)]
    pub grid_n: Option<usize>,
    #[arg(long)]
    pub stages: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Checkpoints to export; repeat the flag to compare models. Models are
    /// named after the checkpoint file stem, or its directory for
    /// `checkpoint.json`.
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long)]
    pub n_episodes: Option<usize>,
    #[arg(long)]
    pub bins: Option<usize>,
    /// Bin all models over the pooled range so their histograms line up.
    #[arg(long)]
    pub common_range: bool,
    /// Quantile levels marked on the cost distribution.
    #[arg(long, value_delimiter = ',', default_value = "0.6,0.8")]
    pub alphas: Vec<f64>,
    #[arg(long)]
    pub greedy: bool,
}

/// Error plus the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: Error,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        let code = match &error {
            Error::Config(_) => EXIT_CONFIG,
            Error::Io { .. } => EXIT_IO,
            Error::Unsupported(_) => EXIT_UNSUPPORTED,
            Error::Checkpoint(_) => EXIT_CHECKPOINT,
            _ => EXIT_OTHER,
        };
        Failure { code, error }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.error);
            f.code
        }
    }
}

pub fn run(cli: &Cli) -> std::result::Result<(), Failure> {
    configure_threads();
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config <FILE> is required".into()))?;
    let cfg = RunConfig::load(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut cfg = cfg;
    if let Some(seed) = cli.seed {
        match cli.command {
            Command::Train => {
                cfg.train.seed = seed;
                cfg.net.seed = seed;
            }
            _ => cfg.eval.seed = seed,
        }
    }
    let out = cli.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let run = cfg.resolve(&base)?;
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    match &cli.command {
        Command::Train => cmd_train(&run, &out),
        Command::Eval(a) => cmd_eval(&run, &out, a),
        Command::Oracle(a) => cmd_oracle(&run, &out, a),
        Command::Export(a) => cmd_export(&run, &out, a),
    }
}

fn configure_threads() {
    if let Ok(v) = std::env::var(THREADS_VAR) {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                // a second call in the same process keeps the first pool
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => warn!("ignoring {THREADS_VAR}={v}: expected a positive integer"),
        }
    }
}

#[derive(Debug, Serialize)]
struct TrainSummary<'a> {
    config_hash: &'a str,
    seed: u64,
    epochs_run: usize,
    upsilon_star: f64,
    sigma2: f64,
    bracket: Interval,
    cost_bounds: Interval,
    aborted: Option<String>,
}

fn sidecar(run: &Resolved, seed: u64, kind: &str, details: serde_json::Value) -> Sidecar {
    Sidecar { config_hash: run.hash.clone(), seed, kind: kind.into(), details }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn cmd_train(run: &Resolved, out: &Path) -> std::result::Result<(), Failure> {
    let cfg = &run.config;
    let env = run.env.as_env();
    let outcome = train(env, &run.spec, &cfg.net, &cfg.train, |row| info!("{}", row.csv()))?;

    let mut log = String::from(LOG_HEADER);
    log.push('\n');
    for row in &outcome.log {
        let _ = writeln!(log, "{}", row.csv());
    }
    let log_path = out.join("training_log.csv");
    std::fs::write(&log_path, log).map_err(|e| Error::io(&log_path, e))?;
    write_sidecar(&log_path, &sidecar(run, cfg.train.seed, "training_log", serde_json::json!({ "net_seed": cfg.net.seed })))?;

    let ck_path = out.join("checkpoint.json");
    let ck = outcome.agent.to_checkpoint(&run.spec, outcome.upsilon_star(), &run.hash);
    ck.save(&ck_path)?;
    write_sidecar(&ck_path, &sidecar(run, cfg.train.seed, "checkpoint", serde_json::json!({ "net_seed": cfg.net.seed })))?;

    let summary = TrainSummary {
        config_hash: &run.hash,
        seed: cfg.train.seed,
        epochs_run: outcome.log.len(),
        upsilon_star: outcome.upsilon_star(),
        sigma2: outcome.upsilon.sigma2,
        bracket: outcome.agent.bracket,
        cost_bounds: outcome.bounds,
        aborted: outcome.aborted.as_ref().map(|e| e.to_string()),
    };
    write_json(&out.join("train_summary.json"), &summary)?;
    println!("upsilon_star = {}", outcome.upsilon_star());
    if let Some(e) = outcome.aborted {
        return Err(Failure { code: EXIT_TRAINING, error: e });
    }
    Ok(())
}

/// Loads a checkpoint and checks that it was produced for this configuration.
pub fn load_checkpoint(run: &Resolved, path: &Path) -> Result<Checkpoint> {
    let ck = match Checkpoint::load(path) {
        Err(Error::Json(e)) => return Err(Error::Checkpoint(format!("{}: {e}", path.display()))),
        other => other?,
    };
    if ck.config_hash != run.hash {
        return Err(Error::Checkpoint(format!(
            "{} was trained for config {} but the current config hashes to {}",
            path.display(),
            ck.config_hash,
            run.hash
        )));
    }
    Ok(ck)
}

fn default_heatmap_grid(env: &EnvModel, ck: &Checkpoint) -> Option<HeatmapGrid> {
    let EnvModel::Arbitrage(e) = env else { return None };
    let p = &e.params;
    let sd = p.initial_price_std();
    let lin = |lo: f64, hi: f64, n: usize| -> Vec<f64> { (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect() };
    let ys = lin(ck.encoding.y_mid - ck.encoding.y_scale, ck.encoding.y_mid + ck.encoding.y_scale, 11);
    Some(HeatmapGrid { prices: lin(p.mu - 2.0 * sd, p.mu + 2.0 * sd, 21), inventories: lin(-p.q_max, p.q_max, 21), ys })
}

fn export_checkpoint_figures(run: &Resolved, ck: &Checkpoint, out: &Path, prefix: &str, value: bool, heatmaps: bool) -> Result<()> {
    let cfg = &run.config;
    let env = run.env.as_env();
    let seed = cfg.eval.seed;
    if value {
        let bracket = ck.encoding.upsilon_interval();
        let ups = bracket.grid(cfg.eval.upsilon_points);
        let states = run.env.probe_states();
        let rows = value_curve(env, &ck.risk, &ck.encoding, &ck.value, &ck.policy, &states, &ups, cfg.eval.mc_episodes, seed)?;
        let path = out.join(format!("{prefix}value_curve.csv"));
        export_value_curve(&rows, &path)?;
        let max_se = rows.iter().map(|r| r.v_mc_se).fold(0.0, f64::max);
        write_sidecar(&path, &sidecar(run, seed, "value_curve", serde_json::json!({ "states": states, "mc_episodes": cfg.eval.mc_episodes, "max_mc_se": max_se })))?;
    }
    if heatmaps {
        match default_heatmap_grid(&run.env, ck) {
            None => warn!("policy heatmaps need the arbitrage environment; skipped"),
            Some(grid) => {
                for t in 0..env.horizon() {
                    let rows = policy_heatmap(env, &ck.encoding, &ck.policy, ck.upsilon_star, t, &grid)?;
                    let path = out.join(format!("{prefix}heatmap_t{t}.csv"));
                    export_policy_heatmap(&rows, t, &path)?;
                    write_sidecar(&path, &sidecar(run, seed, "policy_heatmap", serde_json::json!({ "t": t, "upsilon": ck.upsilon_star, "action": "mean" })))?;
                }
            }
        }
    }
    Ok(())
}

pub fn cmd_eval(run: &Resolved, out: &Path, args: &EvalArgs) -> std::result::Result<(), Failure> {
    let cfg = &run.config;
    let ck_path = args.checkpoint.clone().unwrap_or_else(|| out.join("checkpoint.json"));
    let ck = load_checkpoint(run, &ck_path)?;
    let n = args.n_episodes.unwrap_or(cfg.eval.n_episodes);
    if n == 0 {
        return Err(Error::Config("--n-episodes must be >= 1".into()).into());
    }
    let greedy = args.greedy || cfg.eval.greedy;
    let env = run.env.as_env();
    let (report, costs) = evaluate_policy(env, &ck.encoding, &ck.policy, ck.upsilon_star, n, cfg.eval.seed, greedy)?;
    let path = out.join("report.json");
    write_json(&path, &report)?;
    write_sidecar(&path, &sidecar(run, cfg.eval.seed, "evaluation", serde_json::json!({ "checkpoint": ck_path })))?;
    println!("{}", serde_json::to_string_pretty(&report).map_err(Error::from)?);
    if args.costs {
        let path = out.join("costs.csv");
        let samples = [CostSample { name: "model", costs: &costs }];
        export_cost_distribution(&samples, &[0.6, 0.8], cfg.eval.bins, false, &path)?;
        write_sidecar(&path, &sidecar(run, cfg.eval.seed, "cost_distribution", serde_json::json!({ "n_episodes": n, "greedy": greedy })))?;
    }
    export_checkpoint_figures(run, &ck, out, "", args.value_curve, args.heatmaps)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct Comparison {
    checkpoint: PathBuf,
    upsilon_star: f64,
    policy_objective: f64,
    policy_upsilon: f64,
    optimal_objective: f64,
    optimal_upsilon: f64,
    gap: f64,
    grid_n: usize,
}

pub fn cmd_oracle(run: &Resolved, out: &Path, args: &OracleArgs) -> std::result::Result<(), Failure> {
    let Some(mdp) = run.env.tabular() else {
        return Err(Error::Unsupported(
            "the oracle needs env.kind = \"tabular\"; exact dynamic programming is not available for the continuous arbitrage environment (use `eval` instead)".into(),
        )
        .into());
    };
    let grid_n = args.grid_n.unwrap_or(run.config.oracle.grid_n);
    let stages = args.stages.unwrap_or(run.config.oracle.stages);
    if grid_n < 2 || stages == 0 {
        return Err(Error::Config("--grid-n must be >= 2 and --stages >= 1".into()).into());
    }
    let report = oracle_report(mdp, &run.spec, grid_n, stages)?;
    let path = out.join("oracle_report.json");
    write_json(&path, &report)?;
    write_sidecar(&path, &sidecar(run, 0, "oracle_report", serde_json::Value::Null))?;
    println!("upsilon_star = {}\nobjective = {}", report.upsilon_star, report.objective);

    if let Some(ck_path) = &args.compare {
        let ck = load_checkpoint(run, ck_path)?;
        let graph = AugmentedGraph::new(mdp)?;
        let bracket = mdp_bracket(mdp, &run.spec)?;
        let policy = NetworkPolicy { policy: &ck.policy, encoding: &ck.encoding, n_states: mdp.n_states, upsilon: ck.upsilon_star };
        let law = graph.cost_law(&policy)?;
        let (pu, pv) = grid_argmin(|u| law_objective(&run.spec, &law, u), bracket, grid_n)?;
        let (ou, ov) = grid_argmin(|u| graph.objective(&run.spec, u), bracket, grid_n)?;
        let cmp = Comparison {
            checkpoint: ck_path.clone(),
            upsilon_star: ck.upsilon_star,
            policy_objective: pv,
            policy_upsilon: pu,
            optimal_objective: ov,
            optimal_upsilon: ou,
            gap: pv - ov,
            grid_n,
        };
        write_json(&out.join("oracle_compare.json"), &cmp)?;
        println!("gap = {}", cmp.gap);
    }
    Ok(())
}

fn model_name(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    if stem == "checkpoint" {
        if let Some(dir) = path.parent().and_then(|p| p.file_name()).and_then(|s| s.to_str()) {
            return dir.to_string();
        }
    }
    stem.to_string()
}

pub fn cmd_export(run: &Resolved, out: &Path, args: &ExportArgs) -> std::result::Result<(), Failure> {
    let cfg = &run.config;
    let n = args.n_episodes.unwrap_or(cfg.eval.n_episodes);
    let bins = args.bins.unwrap_or(cfg.eval.bins);
    if n == 0 || bins == 0 {
        return Err(Error::Config("--n-episodes and --bins must be >= 1".into()).into());
    }
    if args.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
        return Err(Error::Config("--alphas must lie in (0, 1)".into()).into());
    }
    let greedy = args.greedy || cfg.eval.greedy;
    let env = run.env.as_env();
    let mut names = Vec::new();
    let mut all_costs = Vec::new();
    let mut reports: Vec<(String, EvaluationReport)> = Vec::new();
    for path in &args.checkpoints {
        // checkpoints of other objectives on the same environment are welcome here
        let ck = Checkpoint::load(path)?;
        let name = model_name(path);
        if names.contains(&name) {
            return Err(Error::Config(format!("two checkpoints are both named {name}")).into());
        }
        let (report, costs) = evaluate_policy(env, &ck.encoding, &ck.policy, ck.upsilon_star, n, cfg.eval.seed, greedy)?;
        let prefix = format!("{name}_");
        export_checkpoint_figures(run, &ck, out, &prefix, true, true)?;
        names.push(name.clone());
        all_costs.push(costs);
        reports.push((name, report));
    }
    let samples: Vec<CostSample> = names.iter().zip(&all_costs).map(|(name, c)| CostSample { name, costs: c }).collect();
    let path = out.join("cost_distribution.csv");
    export_cost_distribution(&samples, &args.alphas, bins, args.common_range, &path)?;
    let details = serde_json::json!({ "models": names, "n_episodes": n, "common_range": args.common_range, "greedy": greedy });
    write_sidecar(&path, &sidecar(run, cfg.eval.seed, "cost_distribution", details))?;
    let table: serde_json::Map<String, serde_json::Value> =
        reports.into_iter().map(|(k, r)| (k, serde_json::to_value(r).unwrap_or_default())).collect();
    write_json(&out.join("summary_table.json"), &table)?;
    Ok(())
}
