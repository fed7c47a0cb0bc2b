//! Acceptance suite: one pass/fail line per criterion and a summary line.
//! With `ACCEPTANCE_STRICT=1` any failure makes the process exit nonzero.
//!
//! `ACCEPTANCE_ONLY=3,4` restricts the run to the listed criteria;
//! `ACCEPTANCE_DEBUG=1` prints every critic probe.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::Rng;
use riskgrad::algo::{train, TrainOutcome};
use riskgrad::config::{Resolved, RunConfig};
use riskgrad::env::{Action, ArbitrageEnv, ArbitrageParams, Environment, TabularMdp};
use riskgrad::eval::{evaluate_policy, probe_value, CostStats};
use riskgrad::net::{Mlp, PolicyHead, PolicyNet, Tape, ValueNet};
use riskgrad::oracle::{
    alt_min_trace, law_quantile, literal_policies, mdp_bracket, optimal_upsilon_scan, random_mdp,
    tree_optimal_values, AltMinOptions, AugmentedGraph, AugmentedPolicy, NetworkPolicy, RandomMdpParams,
    RandomizedNodePolicy,
};
use riskgrad::rng::{stream, SimRng};
use riskgrad::scoring::{support_interval, Interval, RiskSpec};

type Outcome = Result<String, String>;

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn mdp_suite(n: usize, seed: u64) -> Vec<TabularMdp> {
    let params = RandomMdpParams::default();
    (0..n).map(|i| random_mdp(&mut stream(seed, 0, i as u64), &params)).collect()
}

// 1
fn rockafellar_uryasev() -> Outcome {
    let start = Instant::now();
    let mut rng = stream(101, 0, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let atoms = rng.gen_range(1..=50);
        let alpha = rng.gen_range(0.05..0.99);
        let raw: Vec<f64> = (0..atoms).map(|_| rng.gen_range(0.01..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let law: Vec<(f64, f64)> = raw.iter().map(|w| (rng.gen_range(-5.0..5.0), w / total)).collect();

        // tail average of the worst 1 - alpha probability mass
        let mut sorted = law.clone();
        sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut left = 1.0 - alpha;
        let mut acc = 0.0;
        for &(c, w) in &sorted {
            let take = w.min(left);
            acc += take * c;
            left -= take;
            if left <= 0.0 {
                break;
            }
        }
        let tail = acc / (1.0 - alpha);

        // the convex piecewise-linear objective attains its minimum at an atom
        let ru = |u: f64| u + law.iter().map(|&(c, w)| w * (c - u).max(0.0)).sum::<f64>() / (1.0 - alpha);
        let ru_min = law.iter().map(|a| ru(a.0)).fold(f64::INFINITY, f64::min);

        let spec = RiskSpec::es(alpha);
        let lib = spec.law_risk(&law, support_interval(&law), 2001).map_err(|e| e.to_string())?.rho;
        worst = worst.max((ru_min - tail).abs()).max((lib - tail).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    check(worst < 1e-6 && secs < 5.0, format!("max |diff| {worst:.2e}, {secs:.2} s"))
}

// 2
fn variance_as_scoring() -> Outcome {
    let mut rng = stream(102, 0, 0);
    let (mut worst_var, mut worst_mean, mut worst_mv): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..200 {
        let n = rng.gen_range(2..400);
        let scale = rng.gen_range(0.1..10.0);
        let xs: Vec<f64> = (0..n).map(|_| scale * rng.gen_range(-1.0..1.0) + rng.gen_range(-3.0..3.0)).collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
        let est = RiskSpec::variance().empirical_risk(&xs, 2001).map_err(|e| e.to_string())?;
        worst_var = worst_var.max((est.rho - var).abs());
        worst_mean = worst_mean.max((est.upsilon_star - m).abs());
        let lambda = rng.gen_range(0.0..3.0);
        let mv = RiskSpec::mean_variance(lambda).empirical_risk(&xs, 2001).map_err(|e| e.to_string())?;
        worst_mv = worst_mv.max((mv.rho - (m + lambda * var)).abs());
    }
    check(
        worst_var < 1e-9 && worst_mean < 1e-9 && worst_mv < 1e-8,
        format!("variance {worst_var:.2e}, upsilon* vs mean {worst_mean:.2e}, mean-variance {worst_mv:.2e}"),
    )
}

fn random_policy(g: &AugmentedGraph, rng: &mut SimRng) -> RandomizedNodePolicy {
    let probs = (0..g.horizon)
        .map(|t| {
            (0..g.layers[t].len())
                .map(|_| {
                    let w: Vec<f64> = (0..g.n_actions).map(|_| rng.gen::<f64>().powi(3)).collect();
                    let s: f64 = w.iter().sum();
                    w.into_iter().map(|x| x / s).collect()
                })
                .collect()
        })
        .collect();
    RandomizedNodePolicy { probs }
}

const LITERAL_LIMIT: f64 = 4096.0;

// 3
fn bellman_oracle() -> Outcome {
    let start = Instant::now();
    let specs = [RiskSpec::es(0.8), RiskSpec::variance(), RiskSpec::mean_variance(1.0), RiskSpec::mad()];
    let mut worst: f64 = 0.0;
    let mut literal = 0;
    let mut dominance_violations = 0;
    let mut rng = stream(103, 1, 0);
    for mdp in mdp_suite(100, 103) {
        let g = AugmentedGraph::new(&mdp).map_err(|e| e.to_string())?;
        let literal_set: Option<Vec<_>> = literal_policies(&g, LITERAL_LIMIT).ok().map(|it| it.collect());
        literal += literal_set.is_some() as usize;
        for spec in &specs {
            let bracket = mdp_bracket(&mdp, spec).map_err(|e| e.to_string())?;
            for u in bracket.grid(5) {
                let table = g.dp_optimal_value(spec, u).map_err(|e| e.to_string())?;
                // every deterministic history-dependent policy, by history-tree search
                let tree = tree_optimal_values(&mdp, spec, u).map_err(|e| e.to_string())?;
                for s in 0..mdp.n_states {
                    worst = worst.max((table.values[0][s] - tree[s]).abs());
                }
                // and literally, one policy at a time, when there are few enough
                if let Some(pols) = &literal_set {
                    let mut best = vec![f64::INFINITY; mdp.n_states];
                    for p in pols {
                        let v = g.dp_policy_value(p, spec, u).map_err(|e| e.to_string())?;
                        for s in 0..mdp.n_states {
                            best[s] = best[s].min(v.values[0][s]);
                        }
                    }
                    for s in 0..mdp.n_states {
                        worst = worst.max((table.values[0][s] - best[s]).abs());
                    }
                }
                for _ in 0..2 {
                    let pol = random_policy(&g, &mut rng);
                    let v = g.dp_policy_value(&pol, spec, u).map_err(|e| e.to_string())?;
                    for t in 0..=g.horizon {
                        for (a, b) in v.values[t].iter().zip(&table.values[t]) {
                            if *a < *b - 1e-12 {
                                dominance_violations += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-12 && dominance_violations == 0 && secs < 60.0,
        format!("max |DP - enumeration| {worst:.2e} ({literal}/100 also enumerated literally), {dominance_violations} dominance violations, {secs:.1} s"),
    )
}

// 4
fn exchange_of_infima() -> Outcome {
    let grid_n = 41;
    let specs = [RiskSpec::es(0.8), RiskSpec::variance(), RiskSpec::mean_variance(1.0)];
    let mut instances = 0;
    let mut mismatches = 0;
    let mut worst_dp: f64 = 0.0;
    for mdp in mdp_suite(100, 103) {
        let g = AugmentedGraph::new(&mdp).map_err(|e| e.to_string())?;
        let Ok(pols) = literal_policies(&g, LITERAL_LIMIT) else { continue };
        let laws: Vec<Vec<(f64, f64)>> = pols.map(|p| g.cost_law(&p)).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
        instances += 1;
        for spec in &specs {
            let grid = mdp_bracket(&mdp, spec).map_err(|e| e.to_string())?.grid(grid_n);
            // J[pi][u]
            let j: Vec<Vec<f64>> = laws
                .iter()
                .map(|law| grid.iter().map(|&u| spec.objective(law, u)).collect::<Result<_, _>>())
                .collect::<Result<_, _>>()
                .map_err(|e| e.to_string())?;
            let u_then_pi = (0..grid.len()).map(|k| j.iter().map(|r| r[k]).fold(f64::INFINITY, f64::min)).fold(f64::INFINITY, f64::min);
            let pi_then_u = j.iter().map(|r| r.iter().copied().fold(f64::INFINITY, f64::min)).fold(f64::INFINITY, f64::min);
            if u_then_pi != pi_then_u {
                mismatches += 1;
            }
            // the outer problem solved through dynamic programming
            let dp = grid.iter().map(|&u| g.objective(spec, u)).collect::<Result<Vec<_>, _>>().map_err(|e| e.to_string())?;
            let dp_min = dp.into_iter().fold(f64::INFINITY, f64::min);
            worst_dp = worst_dp.max((dp_min - pi_then_u).abs());
        }
    }
    check(
        mismatches == 0 && instances >= 20 && worst_dp <= 1e-12,
        format!("{instances} enumerable MDPs x 3 specs, {mismatches} order mismatches, max |DP - enumeration| {worst_dp:.2e}"),
    )
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

fn central_difference(params: &mut [f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let h = 1e-6;
    (0..params.len())
        .map(|i| {
            let keep = params[i];
            params[i] = keep + h;
            let up = f(params);
            params[i] = keep - h;
            let down = f(params);
            params[i] = keep;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn with_params(mlp: &Mlp, p: &[f64]) -> Mlp {
    let mut m = mlp.clone();
    m.params_mut().copy_from_slice(p);
    m
}

// 5
fn gradients() -> Outcome {
    let mut rng = stream(105, 0, 0);
    let mut worst: f64 = 0.0;
    for k in 0..20 {
        let input = rng.gen_range(1..5);
        let mut sizes = vec![input];
        for _ in 0..rng.gen_range(1..3) {
            sizes.push(rng.gen_range(2..6));
        }
        let x: Vec<f64> = (0..input).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut init = stream(105, 1, k);

        // categorical policy
        let n = rng.gen_range(2..5);
        let mut s = sizes.clone();
        s.push(n);
        let pol = PolicyNet::new(Mlp::new(&s, 1.0, &mut init).unwrap(), PolicyHead::Categorical { n }).unwrap();
        let a = Action::Discrete(rng.gen_range(0..n));
        worst = worst.max(policy_fd(&pol, &x, &a));

        // squashed Gaussian policy
        let mut s = sizes.clone();
        s.push(2);
        let a_max = rng.gen_range(0.5..3.0);
        let pol = PolicyNet::new(Mlp::new(&s, 0.5, &mut init).unwrap(), PolicyHead::SquashedGaussian { a_max: vec![a_max] }).unwrap();
        let a = Action::Continuous(vec![a_max * rng.gen_range(-0.9..0.9)]);
        worst = worst.max(policy_fd(&pol, &x, &a));

        // critic regression loss
        let mut s = sizes.clone();
        s.push(1);
        let value = ValueNet::new(Mlp::new(&s, 1.0, &mut init).unwrap()).unwrap();
        let batch: Vec<(Vec<f64>, f64)> = (0..6)
            .map(|_| ((0..input).map(|_| rng.gen_range(-1.0..1.0)).collect(), rng.gen_range(-2.0..2.0)))
            .collect();
        let mut grad = vec![0.0; value.mlp.n_params()];
        value.backprop_mse(&batch, &mut grad, &mut Tape::default()).unwrap();
        let mut p = value.mlp.params().to_vec();
        let fd = central_difference(&mut p, |q| {
            let v = ValueNet::new(with_params(&value.mlp, q)).unwrap();
            batch.iter().map(|(x, t)| (v.eval(x, &mut Tape::default()) - t).powi(2)).sum::<f64>() / batch.len() as f64
        });
        worst = worst.max(rel_err(&grad, &fd));
    }
    check(worst < 1e-4, format!("max relative error {worst:.2e} over 20 networks x 3 gradients"))
}

fn policy_fd(pol: &PolicyNet, x: &[f64], a: &Action) -> f64 {
    let mut grad = vec![0.0; pol.mlp.n_params()];
    pol.log_prob_grad(x, a, 1.0, &mut grad, &mut Tape::default()).unwrap();
    let mut p = pol.mlp.params().to_vec();
    let fd = central_difference(&mut p, |q| {
        let net = PolicyNet { mlp: with_params(&pol.mlp, q), head: pol.head.clone() };
        net.log_prob(x, a).unwrap()
    });
    rel_err(&grad, &fd)
}

/// Lipschitz constant in `u` of `u -> h(E f(C, u), u)` for costs in `bracket`.
fn lipschitz(spec: &RiskSpec, bracket: Interval) -> f64 {
    match spec.kind {
        riskgrad::scoring::RiskKind::Es => (spec.alpha / (1.0 - spec.alpha)).max(1.0),
        _ => 2.0 * bracket.width(),
    }
}

// 6
fn alternating_descent() -> Outcome {
    let grid_n = 201;
    let eps = 0.05;
    let mut broken = 0;
    let mut far = 0;
    let mut stuck_exact = 0;
    let mut worst_excess: f64 = 0.0;
    for (i, mdp) in mdp_suite(50, 106).into_iter().enumerate() {
        let g = AugmentedGraph::new(&mdp).map_err(|e| e.to_string())?;
        for spec in [RiskSpec::es(0.8), RiskSpec::variance()] {
            let bracket = mdp_bracket(&mdp, &spec).map_err(|e| e.to_string())?;
            let scan = optimal_upsilon_scan(&g, &spec, bracket, grid_n).map_err(|e| e.to_string())?;
            let start = bracket.lo + (bracket.width() * ((i % 7) as f64 + 0.5) / 7.0);
            let opts = AltMinOptions { n_stages: 12, eps, grid_n, perturb_seed: Some(i as u64) };
            let trace = match alt_min_trace(&g, &spec, bracket, start, opts) {
                Ok(t) => t,
                Err(_) => {
                    broken += 1;
                    continue;
                }
            };
            for (n, w) in trace.windows(2).enumerate() {
                let (k0, k1) = ((n + 1) as f64, (n + 2) as f64);
                if w[1].objective + eps / k1 > w[0].objective + eps / k0 + 1e-12 {
                    broken += 1;
                }
            }
            let last = trace.last().unwrap();
            let excess = last.objective - scan.objective;
            let tol = lipschitz(&spec, bracket) * scan.resolution + last.slack;
            worst_excess = worst_excess.max(excess / tol);
            if excess > tol {
                // same start without the slack perturbation
                let exact = alt_min_trace(&g, &spec, bracket, start, AltMinOptions { perturb_seed: None, eps: 0.0, ..opts })
                    .map_err(|e| e.to_string())?;
                if exact.last().unwrap().objective - scan.objective > tol {
                    stuck_exact += 1;
                }
                far += 1;
            }
        }
    }
    check(
        broken == 0 && far == 0,
        format!("{broken} broken chains, {far}/100 limits outside resolution ({stuck_exact} of them also with the exact chain; worst excess {worst_excess:.3} of tolerance)"),
    )
}

fn exact_initial_value(g: &AugmentedGraph, pol: &dyn AugmentedPolicy, spec: &RiskSpec, u: f64) -> Result<f64, String> {
    Ok(g.initial_value(&g.dp_policy_value(pol, spec, u).map_err(|e| e.to_string())?))
}

// 7
fn es_quantile_shortcut() -> Outcome {
    let grid_n = 401;
    let alpha = 0.8;
    let spec = RiskSpec::es(alpha);
    let mut checked = 0;
    let mut misses = 0;
    for mdp in mdp_suite(50, 107) {
        let g = AugmentedGraph::new(&mdp).map_err(|e| e.to_string())?;
        let bracket = mdp_bracket(&mdp, &spec).map_err(|e| e.to_string())?;
        let res = bracket.width() / (grid_n - 1) as f64;
        let mut u = bracket.mid();
        for _ in 0..4 {
            let pol = g.dp_optimal_value(&spec, u).map_err(|e| e.to_string())?.greedy_policy().map_err(|e| e.to_string())?;
            let q = law_quantile(&g.cost_law(&pol).map_err(|e| e.to_string())?, alpha);
            // the grid minimizers of the policy's value, evaluated by backward recursion
            let grid = bracket.grid(grid_n);
            let vals: Vec<f64> = grid.iter().map(|&v| exact_initial_value(&g, &pol, &spec, v)).collect::<Result<_, _>>()?;
            let best = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let tie = 1e-12 * (1.0 + best.abs());
            let argmins: Vec<f64> = grid.iter().zip(&vals).filter(|(_, v)| **v <= best + tie).map(|(u, _)| *u).collect();
            let (lo, hi) = (argmins[0], *argmins.last().unwrap());
            checked += 1;
            if q < lo - res || q > hi + res {
                misses += 1;
            }
            u = bracket.clamp(q);
        }
    }
    check(misses == 0, format!("{checked} stages, {misses} quantiles off the grid argmin by more than one cell"))
}

fn load_config(name: &str) -> Result<Resolved, String> {
    let path = repo().join("configs").join(name);
    let cfg = RunConfig::load(&path).map_err(|e| e.to_string())?;
    cfg.resolve(path.parent().unwrap()).map_err(|e| e.to_string())
}

fn train_seeded(run: &Resolved, seed: u64) -> Result<(TrainOutcome, Duration), String> {
    let mut net = run.config.net.clone();
    let mut cfg = run.config.train.clone();
    net.seed = seed;
    cfg.seed = seed;
    let start = Instant::now();
    let out = train(run.env.as_env(), &run.spec, &net, &cfg, |_| {}).map_err(|e| e.to_string())?;
    if let Some(e) = &out.aborted {
        return Err(format!("training aborted: {e}"));
    }
    Ok((out, start.elapsed()))
}

/// Exact risk of the deployed network policy (auxiliary input fixed at the
/// learned value) on a tabular problem.
fn deployed_risk(run: &Resolved, out: &TrainOutcome, grid_n: usize) -> Result<f64, String> {
    let mdp = run.env.tabular().ok_or("tabular environment expected")?;
    let g = AugmentedGraph::new(mdp).map_err(|e| e.to_string())?;
    let pol = NetworkPolicy { policy: &out.agent.policy, encoding: &out.agent.encoding, n_states: mdp.n_states, upsilon: out.upsilon_star() };
    let law = g.cost_law(&pol).map_err(|e| e.to_string())?;
    let bracket = mdp_bracket(mdp, &run.spec).map_err(|e| e.to_string())?;
    Ok(run.spec.law_risk(&law, bracket, grid_n).map_err(|e| e.to_string())?.rho)
}

// 8 and 9 share the trained models
fn learning_vs_oracle(trained: &mut Vec<TrainOutcome>) -> Outcome {
    let run = load_config("two_state_es.toml")?;
    let mdp = run.env.tabular().ok_or("tabular environment expected")?;
    let g = AugmentedGraph::new(mdp).map_err(|e| e.to_string())?;
    let bracket = mdp_bracket(mdp, &run.spec).map_err(|e| e.to_string())?;
    let scan = optimal_upsilon_scan(&g, &run.spec, bracket, 2001).map_err(|e| e.to_string())?;
    let mut hits = 0;
    let mut slowest = Duration::ZERO;
    let mut gaps = Vec::new();
    for seed in 0..10 {
        let (out, took) = train_seeded(&run, seed)?;
        slowest = slowest.max(took);
        let risk = deployed_risk(&run, &out, 2001)?;
        let gap = risk - scan.objective;
        gaps.push(format!("{gap:.3}"));
        if gap <= 0.05 {
            hits += 1;
        }
        trained.push(out);
    }
    check(
        hits >= 8 && slowest <= Duration::from_secs(600),
        format!(
            "{hits}/10 seeds within 0.05 of the optimum {:.4} (gaps {}), slowest seed {:.0} s",
            scan.objective,
            gaps.join(" "),
            slowest.as_secs_f64()
        ),
    )
}

// 9
fn critic_approximation(trained: &[TrainOutcome]) -> Outcome {
    let run = load_config("two_state_es.toml")?;
    let mdp = run.env.tabular().ok_or("tabular environment expected")?;
    let out = trained.first().ok_or("criterion 8 produced no model")?;
    let g = AugmentedGraph::new(mdp).map_err(|e| e.to_string())?;
    let env = run.env.as_env();
    let u0 = out.upsilon_star();
    let mut worst_excess = f64::NEG_INFINITY;
    let mut worst = String::new();
    let mut probes = 0;
    let pol = NetworkPolicy { policy: &out.agent.policy, encoding: &out.agent.encoding, n_states: mdp.n_states, upsilon: u0 };
    let visits = visit_probabilities(&g, &pol)?;
    let mut skipped = 0;
    for t in 0..mdp.horizon {
        for (i, node) in g.layers[t].iter().enumerate() {
            // the critic only sees states the policy actually reaches
            if visits[t][i] < MIN_VISIT {
                skipped += 1;
                continue;
            }
            for du in [-0.1, 0.0, 0.1] {
                let u = out.agent.bracket.clamp(u0 + du);
                let p = probe_value(
                    env,
                    &run.spec,
                    &out.agent.encoding,
                    &out.agent.value,
                    &out.agent.policy,
                    t,
                    &[node.s as f64],
                    node.y,
                    u,
                    20_000,
                    9000 + probes,
                )
                .map_err(|e| e.to_string())?;
                probes += 1;
                let excess = (p.v_net - p.v_mc).abs() - (0.05 + 3.0 * p.v_mc_se);
                if std::env::var("ACCEPTANCE_DEBUG").is_ok() {
                    eprintln!("t={t} s={} y={:.2} u={u:.3} net {:.4} mc {:.4} se {:.4}", node.s, node.y, p.v_net, p.v_mc, p.v_mc_se);
                }
                if excess > worst_excess {
                    worst_excess = excess;
                    worst = format!("t={t} s={} y={:.2} u={u:.3}: net {:.4} mc {:.4} se {:.4}", node.s, node.y, p.v_net, p.v_mc, p.v_mc_se);
                }
            }
        }
    }
    check(
        worst_excess <= 0.0,
        format!("{probes} probes ({skipped} nodes visited with probability < {MIN_VISIT} left out), tightest {worst}"),
    )
}

const MIN_VISIT: f64 = 0.01;

/// Probability that `policy` passes through each node.
fn visit_probabilities(g: &AugmentedGraph, policy: &dyn AugmentedPolicy) -> Result<Vec<Vec<f64>>, String> {
    let mut mass = vec![g.init.clone()];
    let mut probs = Vec::new();
    for t in 0..g.horizon {
        let mut next = vec![0.0; g.layers[t + 1].len()];
        for (i, node) in g.layers[t].iter().enumerate() {
            let at = riskgrad::oracle::NodeRef { t, index: i, s: node.s, y: node.y };
            policy.probs(&at, g.n_actions, &mut probs).map_err(|e| e.to_string())?;
            for (a, edges) in node.edges.iter().enumerate() {
                for e in edges {
                    next[e.child] += mass[t][i] * probs[a] * e.prob;
                }
            }
        }
        mass.push(next);
    }
    Ok(mass)
}

// 10
fn arbitrage_ordering() -> Outcome {
    let names = ["mean", "es", "var", "meanvar"];
    let mut stats = Vec::new();
    let mut slowest = Duration::ZERO;
    let eval_seed = 2024;
    for name in names {
        let run = load_config(&format!("arbitrage_{name}.toml"))?;
        let (out, took) = train_seeded(&run, run.config.train.seed)?;
        slowest = slowest.max(took);
        let (report, _) = evaluate_policy(
            run.env.as_env(),
            &out.agent.encoding,
            &out.agent.policy,
            out.upsilon_star(),
            50_000,
            eval_seed,
            false,
        )
        .map_err(|e| e.to_string())?;
        stats.push(report.stats);
    }
    let [mean, es, var, mv]: [CostStats; 4] = stats.clone().try_into().unwrap();
    let mean_ok = [es, var, mv].iter().all(|s| mean.mean <= s.mean);
    let es_ok = es.es_08 <= mean.es_08 - 0.01;
    let var_ok = [mean, es, mv].iter().all(|s| var.variance <= s.variance);
    let mv_ok = [mean, es, var].iter().all(|s| mv.mean_variance <= s.mean_variance);
    let table = names
        .iter()
        .zip(&stats)
        .map(|(n, s)| format!("{n}: mean {:.3} es0.8 {:.3} var {:.4} mv {:.3}", s.mean, s.es_08, s.variance, s.mean_variance))
        .collect::<Vec<_>>()
        .join("; ");
    check(
        mean_ok && es_ok && var_ok && mv_ok && slowest <= Duration::from_secs(1800),
        format!(
            "mean {} es {} var {} mean-var {} | {table} | slowest {:.0} s",
            mean_ok, es_ok, var_ok, mv_ok,
            slowest.as_secs_f64()
        ),
    )
}

// 11
fn environment_ledger() -> Outcome {
    let env = ArbitrageEnv::new(ArbitrageParams::default()).map_err(|e| e.to_string())?;
    let p = env.params;
    let space = env.action_space();
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let mut rng = stream(111, 0, i);
        let mut s = env.reset(&mut rng);
        let (p0, q0) = (s[0], s[1]);
        let mut cash = 0.0;
        let mut cost = 0.0;
        for t in 0..p.horizon {
            let a = space.sample_uniform(&mut rng);
            let Action::Continuous(v) = &a else { unreachable!() };
            let (next, c) = env.step(t, &s, &a, &mut rng).map_err(|e| e.to_string())?;
            cash -= (next[1] - s[1]) * s[0] + p.phi * v[0] * v[0];
            cost += c;
            s = next;
        }
        let wealth = cash + s[1] * s[0] - q0 * p0 - p.psi * s[1] * s[1];
        worst = worst.max((cost + wealth).abs());
    }
    let price = 0.4;
    let n = 100_000;
    let mut rng = stream(111, 1, 0);
    let xs: Vec<f64> = (0..n)
        .map(|_| env.step(0, &[price, 0.0], &Action::Continuous(vec![0.0]), &mut rng).map(|r| r.0[0]))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let mean = p.mu + (price - p.mu) * (-p.kappa * p.dt).exp();
    let var = p.sigma * p.sigma * (1.0 - (-2.0 * p.kappa * p.dt).exp()) / (2.0 * p.kappa);
    let nf = n as f64;
    let m = xs.iter().sum::<f64>() / nf;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (nf - 1.0);
    let zm = (m - mean) / (var / nf).sqrt();
    let zv = (v - var) / (var * (2.0 / nf).sqrt());
    check(
        worst < 1e-10 && zm.abs() < 3.0 && zv.abs() < 3.0,
        format!("max |cost + X_T| {worst:.2e}; one-step mean z {zm:.2}, variance z {zv:.2}"),
    )
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |k: usize| only.as_ref().map_or(true, |o| o.contains(&k));
    let mut trained = Vec::new();
    let mut failed = Vec::new();
    let mut passed = 0;
    let mut report = |k: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        if !wanted(k) {
            return;
        }
        let start = Instant::now();
        let res = f();
        let secs = start.elapsed().as_secs_f64();
        match res {
            Ok(d) => {
                passed += 1;
                println!("criterion {k:>2} PASS  {name}: {d} [{secs:.1} s]");
            }
            Err(d) => {
                failed.push(k);
                println!("criterion {k:>2} FAIL  {name}: {d} [{secs:.1} s]");
            }
        }
    };
    report(1, "scoring form of expected shortfall", &mut rockafellar_uryasev);
    report(2, "variance as a scoring function", &mut variance_as_scoring);
    report(3, "Bellman oracle vs enumeration", &mut bellman_oracle);
    report(4, "exchange of infima", &mut exchange_of_infima);
    report(5, "gradients vs finite differences", &mut gradients);
    report(6, "alternating minimization descent", &mut alternating_descent);
    report(7, "ES quantile shortcut", &mut es_quantile_shortcut);
    report(8, "learning vs oracle gap", &mut || learning_vs_oracle(&mut trained));
    if wanted(9) && trained.is_empty() {
        let run = load_config("two_state_es.toml");
        if let Ok(run) = run {
            if let Ok((out, _)) = train_seeded(&run, 0) {
                trained.push(out);
            }
        }
    }
    report(9, "critic vs Monte Carlo", &mut || critic_approximation(&trained));
    report(10, "arbitrage ordering", &mut arbitrage_ordering);
    report(11, "environment ledger and OU moments", &mut environment_ledger);
    let list = failed.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(", ");
    if failed.is_empty() {
        println!("acceptance: {passed} passed, 0 failed");
    } else {
        println!("acceptance: {passed} passed, {} failed (criteria {list})", failed.len());
        if std::env::var("ACCEPTANCE_STRICT").is_ok() {
            std::process::exit(1);
        }
    }
}
