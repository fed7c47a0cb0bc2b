//! Risk functionals of the form `rho(Y) = inf_u h(E[f(Y, u)], u)`.
//!
//! `f` is a scoring function convex in the auxiliary variable `u` for each
//! fixed cost `y`, and `h` is strictly increasing in its first argument. The
//! catalog below covers the expectation, expected shortfall, variance, mean
//! absolute deviation, asymmetric variance, two mean-risk utilities, the
//! entropic risk measure and the entropic value-at-risk.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack used when comparing cumulative weights against a level.
const CDF_EPS: f64 = 1e-12;
/// Ternary refinement stops once the bracket is narrower than this.
const TERNARY_TOL: f64 = 1e-10;
const TERNARY_MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskKind {
    Expectation,
    Es,
    Variance,
    Mad,
    AsymVariance,
    MeanEs,
    MeanVariance,
    Entropic,
    Evar,
}

impl RiskKind {
    pub fn needs_alpha(self) -> bool {
        matches!(self, RiskKind::Es | RiskKind::AsymVariance | RiskKind::MeanEs | RiskKind::Evar)
    }

    /// Kinds whose optimal auxiliary variable is the alpha-quantile of the cost law.
    pub fn is_es_family(self) -> bool {
        matches!(self, RiskKind::Es | RiskKind::MeanEs)
    }

    /// Kinds where `h(x, u) = x`.
    pub fn has_identity_transform(self) -> bool {
        !matches!(self, RiskKind::Entropic | RiskKind::Evar)
    }

    pub fn name(self) -> &'static str {
        match self {
            RiskKind::Expectation => "expectation",
            RiskKind::Es => "es",
            RiskKind::Variance => "variance",
            RiskKind::Mad => "mad",
            RiskKind::AsymVariance => "asym_variance",
            RiskKind::MeanEs => "mean_es",
            RiskKind::MeanVariance => "mean_variance",
            RiskKind::Entropic => "entropic",
            RiskKind::Evar => "evar",
        }
    }
}

/// Closed interval `[lo, hi]` with `lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Argument(format!("invalid interval [{lo}, {hi}]")));
        }
        Ok(Interval { lo, hi })
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    /// `n >= 2` evenly spaced points including both endpoints.
    pub fn grid(&self, n: usize) -> Vec<f64> {
        let step = self.width() / (n - 1) as f64;
        (0..n)
            .map(|i| if i + 1 == n { self.hi } else { self.lo + step * i as f64 })
            .collect()
    }
}

/// Bounds `[y_lo, y_hi]` on the total cost of an episode.
pub type CostBounds = Interval;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskSpec {
    pub kind: RiskKind,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Configured range for the auxiliary variable. Required for EVaR; for
    /// other kinds it overrides the bracket derived from cost bounds.
    #[serde(default)]
    pub upsilon_bracket: Option<Interval>,
}

fn default_alpha() -> f64 {
    0.8
}

fn default_gamma() -> f64 {
    1.0
}

/// Auxiliary-variable range together with a flag telling whether it is a
/// user-supplied epsilon-correct range rather than a guaranteed bracket.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    pub interval: Interval,
    pub user_supplied: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskEstimate {
    pub rho: f64,
    pub upsilon_star: f64,
}

impl RiskSpec {
    pub fn new(kind: RiskKind) -> Self {
        RiskSpec { kind, alpha: default_alpha(), lambda: 0.0, gamma: default_gamma(), upsilon_bracket: None }
    }

    pub fn expectation() -> Self {
        Self::new(RiskKind::Expectation)
    }

    pub fn es(alpha: f64) -> Self {
        RiskSpec { alpha, ..Self::new(RiskKind::Es) }
    }

    pub fn variance() -> Self {
        Self::new(RiskKind::Variance)
    }

    pub fn mad() -> Self {
        Self::new(RiskKind::Mad)
    }

    pub fn asym_variance(alpha: f64) -> Self {
        RiskSpec { alpha, ..Self::new(RiskKind::AsymVariance) }
    }

    pub fn mean_es(alpha: f64, lambda: f64) -> Self {
        RiskSpec { alpha, lambda, ..Self::new(RiskKind::MeanEs) }
    }

    pub fn mean_variance(lambda: f64) -> Self {
        RiskSpec { lambda, ..Self::new(RiskKind::MeanVariance) }
    }

    pub fn entropic(gamma: f64) -> Self {
        RiskSpec { gamma, ..Self::new(RiskKind::Entropic) }
    }

    pub fn evar(alpha: f64, bracket: Interval) -> Self {
        RiskSpec { alpha, upsilon_bracket: Some(bracket), ..Self::new(RiskKind::Evar) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.needs_alpha() && !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0,1), got {}", self.alpha)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.kind == RiskKind::Entropic && !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if let Some(b) = self.upsilon_bracket {
            Interval::new(b.lo, b.hi).map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.kind == RiskKind::Evar && self.upsilon_bracket.is_none() {
            return Err(Error::Config("evar requires a configured upsilon bracket".into()));
        }
        Ok(())
    }

    fn check_domain(&self, y: f64) -> Result<()> {
        if self.kind == RiskKind::Evar && y < 0.0 {
            return Err(Error::Domain(format!("evar scoring requires y >= 0, got {y}")));
        }
        Ok(())
    }

    /// Scoring function `f(y, u)`.
    pub fn eval_f(&self, y: f64, u: f64) -> Result<f64> {
        self.check_domain(y)?;
        let d = y - u;
        let tail = 1.0 / (1.0 - self.alpha);
        Ok(match self.kind {
            RiskKind::Expectation => y,
            RiskKind::Es => u + d.max(0.0) * tail,
            RiskKind::Variance => d * d,
            RiskKind::Mad => d.abs(),
            RiskKind::AsymVariance => {
                if d >= 0.0 {
                    self.alpha * d * d
                } else {
                    (1.0 - self.alpha) * d * d
                }
            }
            RiskKind::MeanEs => y + self.lambda * (u + d.max(0.0) * tail),
            RiskKind::MeanVariance => y + self.lambda * d * d,
            RiskKind::Entropic => (self.gamma * y).exp(),
            RiskKind::Evar => (u.exp() * y).exp() / self.alpha,
        })
    }

    /// Transform `h(x, u)`, strictly increasing in `x`.
    pub fn eval_h(&self, x: f64, u: f64) -> Result<f64> {
        match self.kind {
            RiskKind::Entropic | RiskKind::Evar if x <= 0.0 => {
                Err(Error::Domain(format!("logarithmic transform requires x > 0, got {x}")))
            }
            RiskKind::Entropic => Ok(x.ln() / self.gamma),
            RiskKind::Evar => Ok((-u).exp() * x.ln()),
            _ => Ok(x),
        }
    }

    /// Partial derivatives `(dh/dx, dh/du)` at `(x, u)`.
    pub fn h_partials(&self, x: f64, u: f64) -> Result<(f64, f64)> {
        match self.kind {
            RiskKind::Entropic | RiskKind::Evar if x <= 0.0 => {
                Err(Error::Domain(format!("logarithmic transform requires x > 0, got {x}")))
            }
            RiskKind::Entropic => Ok((1.0 / (self.gamma * x), 0.0)),
            RiskKind::Evar => {
                let e = (-u).exp();
                Ok((e / x, -e * x.ln()))
            }
            _ => Ok((1.0, 0.0)),
        }
    }

    /// An element of the subdifferential of `u -> f(y, u)`. At a tie `y == u`
    /// MAD and the asymmetric variance return 0 and ES returns 1.
    pub fn subgrad_f_upsilon(&self, y: f64, u: f64) -> Result<f64> {
        self.check_domain(y)?;
        let d = y - u;
        let tail = 1.0 / (1.0 - self.alpha);
        let es = 1.0 - if d > 0.0 { tail } else { 0.0 };
        Ok(match self.kind {
            RiskKind::Expectation | RiskKind::Entropic => 0.0,
            RiskKind::Es => es,
            RiskKind::Variance => -2.0 * d,
            RiskKind::Mad => {
                if d > 0.0 {
                    -1.0
                } else if d < 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            RiskKind::AsymVariance => {
                if d > 0.0 {
                    -2.0 * self.alpha * d
                } else if d < 0.0 {
                    -2.0 * (1.0 - self.alpha) * d
                } else {
                    0.0
                }
            }
            RiskKind::MeanEs => self.lambda * es,
            RiskKind::MeanVariance => -2.0 * self.lambda * d,
            RiskKind::Evar => {
                let z = u.exp() * y;
                z * z.exp() / self.alpha
            }
        })
    }

    /// Range of the auxiliary variable containing a minimizer of
    /// `u -> h(E[f(Y,u)], u)` for every `Y` supported on `bounds`.
    pub fn upsilon_bracket(&self, bounds: CostBounds) -> Result<Bracket> {
        if let Some(interval) = self.upsilon_bracket {
            return Ok(Bracket { interval, user_supplied: true });
        }
        if self.kind == RiskKind::Evar {
            return Err(Error::Config("evar has no finite bracket; configure risk.upsilon_lo/hi".into()));
        }
        let interval = Interval::new(bounds.lo, bounds.hi)?;
        Ok(Bracket { interval, user_supplied: false })
    }

    /// `h(sum_i w_i f(y_i, u), u)` for a weighted law (weights sum to one).
    pub fn objective(&self, law: &[(f64, f64)], u: f64) -> Result<f64> {
        let mut x = 0.0;
        for &(y, w) in law {
            x += w * self.eval_f(y, u)?;
        }
        self.eval_h(x, u)
    }

    /// Minimizes the objective over `u` for equally weighted samples.
    pub fn empirical_risk(&self, samples: &[f64], grid_n: usize) -> Result<RiskEstimate> {
        if samples.is_empty() {
            return Err(Error::Argument("empirical_risk needs at least one sample".into()));
        }
        let w = 1.0 / samples.len() as f64;
        let law: Vec<(f64, f64)> = samples.iter().map(|&y| (y, w)).collect();
        let bracket = self.upsilon_bracket(support_interval(&law))?.interval;
        self.law_risk(&law, bracket, grid_n)
    }

    /// Minimizes `u -> h(E[f(Y,u)], u)` over `bracket` for a weighted law.
    ///
    /// ES-family kinds use the lower alpha-quantile and variance kinds use the
    /// mean; the remaining kinds use a grid scan refined by ternary search on
    /// the winning cell.
    pub fn law_risk(&self, law: &[(f64, f64)], bracket: Interval, grid_n: usize) -> Result<RiskEstimate> {
        if law.is_empty() {
            return Err(Error::Argument("empty law".into()));
        }
        if grid_n < 2 {
            return Err(Error::Argument(format!("grid_n must be >= 2, got {grid_n}")));
        }
        let closed_form = match self.kind {
            RiskKind::Es | RiskKind::MeanEs => Some(weighted_lower_quantile(law, self.alpha)),
            RiskKind::Variance | RiskKind::MeanVariance => Some(weighted_mean(law)),
            _ => None,
        };
        match closed_form {
            Some(u) => {
                let rho = self.objective(law, u)?;
                debug_assert!({
                    let grid = minimize_on_grid(|v| self.objective(law, v), bracket, grid_n)?;
                    grid.rho >= rho - 1e-9 * (1.0 + rho.abs())
                });
                Ok(RiskEstimate { rho, upsilon_star: u })
            }
            None => minimize_on_grid(|v| self.objective(law, v), bracket, grid_n),
        }
    }
}

/// Smallest interval containing the law's support, widened when degenerate.
pub fn support_interval(law: &[(f64, f64)]) -> Interval {
    let lo = law.iter().map(|a| a.0).fold(f64::INFINITY, f64::min);
    let hi = law.iter().map(|a| a.0).fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        Interval { lo, hi }
    } else {
        Interval { lo: lo - 1.0, hi: hi + 1.0 }
    }
}

pub fn weighted_mean(law: &[(f64, f64)]) -> f64 {
    let total: f64 = law.iter().map(|a| a.1).sum();
    law.iter().map(|&(y, w)| y * w).sum::<f64>() / total
}

/// `inf { y : F(y) >= alpha }` for a weighted discrete law.
pub fn weighted_lower_quantile(law: &[(f64, f64)], alpha: f64) -> f64 {
    let mut atoms = law.to_vec();
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = atoms.iter().map(|a| a.1).sum();
    let mut cum = 0.0;
    for &(y, w) in &atoms {
        cum += w;
        if cum / total >= alpha - CDF_EPS {
            return y;
        }
    }
    atoms.last().map(|a| a.0).unwrap_or(f64::NAN)
}

/// Lower empirical quantile `inf { y : F_n(y) >= alpha }` of equally weighted samples.
pub fn lower_quantile(samples: &[f64], alpha: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Argument("quantile of an empty sample".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // smallest k with k/n >= alpha
    let k = ((alpha * n as f64) - CDF_EPS * n as f64).ceil().max(1.0) as usize;
    Ok(sorted[k.min(n) - 1])
}

/// Grid scan over `bracket` followed by ternary search on the neighbourhood
/// of the best grid point. Returns the better of the two candidates.
pub fn minimize_on_grid<F>(mut g: F, bracket: Interval, grid_n: usize) -> Result<RiskEstimate>
where
    F: FnMut(f64) -> Result<f64>,
{
    let grid = bracket.grid(grid_n);
    let mut best = (0usize, f64::INFINITY);
    for (i, &u) in grid.iter().enumerate() {
        let v = g(u)?;
        if v < best.1 {
            best = (i, v);
        }
    }
    let (i, grid_val) = best;
    let mut lo = grid[i.saturating_sub(1)];
    let mut hi = grid[(i + 1).min(grid_n - 1)];
    let mut iter = 0;
    while hi - lo > TERNARY_TOL && iter < TERNARY_MAX_ITER {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if g(m1)? <= g(m2)? {
            hi = m2;
        } else {
            lo = m1;
        }
        iter += 1;
    }
    let u_ref = 0.5 * (lo + hi);
    let v_ref = g(u_ref)?;
    if v_ref < grid_val {
        Ok(RiskEstimate { rho: v_ref, upsilon_star: u_ref })
    } else {
        Ok(RiskEstimate { rho: grid_val, upsilon_star: grid[i] })
    }
}
