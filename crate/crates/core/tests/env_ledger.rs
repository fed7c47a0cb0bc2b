use riskgrad::env::{simulate_episode, total_cost, Action, ArbitrageEnv, ArbitrageParams, Environment};
use riskgrad::rng::{stream, SimRng};

fn env() -> ArbitrageEnv {
    ArbitrageEnv::new(ArbitrageParams::default()).unwrap()
}

/// Terminal wealth from a cash account: trades settle at the current price,
/// the position is marked to the final price, and fees are paid in cash.
fn wealth_from_cash_account(env: &ArbitrageEnv, episode: &[riskgrad::env::AugmentedTransition]) -> f64 {
    let p = &env.params;
    let (p0, q0) = (episode[0].s[0], episode[0].s[1]);
    let mut cash = 0.0;
    for tr in episode {
        let Action::Continuous(a) = &tr.a else { panic!("continuous action expected") };
        let filled = tr.s_next[1] - tr.s[1];
        cash -= filled * tr.s[0] + p.phi * a[0] * a[0];
    }
    let last = episode.last().unwrap();
    let (pt, qt) = (last.s_next[0], last.s_next[1]);
    cash + qt * pt - q0 * p0 - p.psi * qt * qt
}

#[test]
fn episode_cost_is_negative_terminal_wealth() {
    let env = env();
    let space = env.action_space();
    let random = move |_: usize, _: f64, _: &[f64], _: f64, rng: &mut SimRng| space.sample_uniform(rng);
    for i in 0..1000 {
        let mut rng = stream(11, 0, i);
        let ep = simulate_episode(&env, &random, 0.0, &mut rng).unwrap();
        let x_t = wealth_from_cash_account(&env, &ep);
        assert!((total_cost(&ep) + x_t).abs() < 1e-10, "episode {i}: {} vs {}", total_cost(&ep), -x_t);
    }
}

#[test]
fn ou_one_step_moments() {
    let env = env();
    let p = &env.params;
    let price = 1.7;
    let n = 100_000;
    let mut rng = stream(12, 0, 0);
    let xs: Vec<f64> = (0..n)
        .map(|_| env.step(0, &[price, 0.0], &Action::Continuous(vec![0.0]), &mut rng).unwrap().0[0])
        .collect();
    let mean = p.mu + (price - p.mu) * (-p.kappa * p.dt).exp();
    let var = p.sigma * p.sigma * (1.0 - (-2.0 * p.kappa * p.dt).exp()) / (2.0 * p.kappa);
    let nf = n as f64;
    let m = xs.iter().sum::<f64>() / nf;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (nf - 1.0);
    assert!((m - mean).abs() < 3.0 * (var / nf).sqrt(), "mean {m} vs {mean}");
    assert!((v - var).abs() < 3.0 * var * (2.0 / nf).sqrt(), "var {v} vs {var}");
}
