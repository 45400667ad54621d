//! Economic environment: effort-cost functions with derivatives, the evidence
//! rent, efficient agent effort, and the maintained assumptions as executable
//! checks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num;
use crate::tol;

const E_MINUS_1: f64 = std::f64::consts::E - 1.0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{what} = {value} is outside [{lo}, {hi}]")]
    Domain {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("environment fails maintained assumptions: {0}")]
    Assumptions(String),
}

/// Effort-cost function on [0, 1] with closed-form derivatives up to order 3
/// for the parametric families. Tabulated costs interpolate monotonically and
/// their third derivative is a finite difference (flagged approximate in
/// assumption reports).
#[derive(Debug, Clone, PartialEq)]
pub enum CostFunction {
    /// `scale * e^exponent`, exponent > 1.
    Power { exponent: f64, scale: f64 },
    /// `(exp(e) - e - 1)/(exp(1) - 1)`: normalized to unit marginal cost at
    /// full effort.
    ExpNormalized,
    /// Monotone cubic (Fritsch–Carlson) through user knots on [0, 1].
    Tabulated(Pchip),
}

impl CostFunction {
    pub fn power(exponent: f64, scale: f64) -> Self {
        CostFunction::Power { exponent, scale }
    }

    pub fn tabulated(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self, ModelError> {
        Ok(CostFunction::Tabulated(Pchip::new(xs, ys)?))
    }

    pub fn value(&self, e: f64) -> f64 {
        match self {
            CostFunction::Power { exponent, scale } => pow_term(*scale, e, *exponent),
            // exp_m1 sidesteps the cancellation in exp(e) - e - 1 near 0.
            CostFunction::ExpNormalized => (e.exp_m1() - e) / E_MINUS_1,
            CostFunction::Tabulated(p) => p.value(e),
        }
    }

    pub fn d1(&self, e: f64) -> f64 {
        match self {
            CostFunction::Power { exponent, scale } => {
                pow_term(scale * exponent, e, exponent - 1.0)
            }
            CostFunction::ExpNormalized => e.exp_m1() / E_MINUS_1,
            CostFunction::Tabulated(p) => p.d1(e),
        }
    }

    pub fn d2(&self, e: f64) -> f64 {
        match self {
            CostFunction::Power { exponent, scale } => {
                pow_term(scale * exponent * (exponent - 1.0), e, exponent - 2.0)
            }
            CostFunction::ExpNormalized => e.exp() / E_MINUS_1,
            CostFunction::Tabulated(p) => p.d2(e),
        }
    }

    pub fn d3(&self, e: f64) -> f64 {
        match self {
            CostFunction::Power { exponent, scale } => pow_term(
                scale * exponent * (exponent - 1.0) * (exponent - 2.0),
                e,
                exponent - 3.0,
            ),
            CostFunction::ExpNormalized => e.exp() / E_MINUS_1,
            // Centered difference of d2: the interpolant's own third
            // derivative is piecewise constant and jumps at knots.
            CostFunction::Tabulated(p) => {
                let h = 1e-5;
                let lo = (e - h).max(0.0);
                let hi = (e + h).min(1.0);
                (p.d2(hi) - p.d2(lo)) / (hi - lo)
            }
        }
    }

    pub fn is_approximate(&self) -> bool {
        matches!(self, CostFunction::Tabulated(_))
    }

    /// Shape requirements every cost must satisfy: anchored at zero with zero
    /// marginal cost, strictly increasing and strictly convex inside (0, 1].
    pub fn validate(&self) -> Result<(), ModelError> {
        if let CostFunction::Power { exponent, scale } = self {
            if !(*exponent > 1.0) || !(*scale > 0.0) {
                return Err(ModelError::Config(format!(
                    "power cost needs exponent > 1 and scale > 0, got ({exponent}, {scale})"
                )));
            }
        }
        if self.value(0.0).abs() > 1e-12 || self.d1(0.0).abs() > 1e-12 {
            return Err(ModelError::Config(
                "cost must satisfy c(0) = 0 and c'(0) = 0".into(),
            ));
        }
        for i in 1..1000 {
            let e = i as f64 / 1000.0;
            if !(self.d1(e) > 0.0) || !(self.d2(e) > 0.0) {
                return Err(ModelError::Config(format!(
                    "cost not strictly increasing/convex at e = {e}"
                )));
            }
        }
        Ok(())
    }

    pub fn from_config(cfg: &CostConfig) -> Result<Self, ModelError> {
        match cfg.family.as_str() {
            "power" => {
                let exponent = *cfg.params.first().ok_or_else(|| {
                    ModelError::Config("power cost needs params [exponent, scale?]".into())
                })?;
                let scale = cfg.params.get(1).copied().unwrap_or(1.0);
                Ok(CostFunction::Power { exponent, scale })
            }
            "exp-normalized" | "exp_normalized" => Ok(CostFunction::ExpNormalized),
            "tabulated" => {
                if cfg.params.len() < 4 || cfg.params.len() % 2 != 0 {
                    return Err(ModelError::Config(
                        "tabulated cost needs interleaved params [x0,y0,x1,y1,...]".into(),
                    ));
                }
                let xs: Vec<f64> = cfg.params.iter().step_by(2).copied().collect();
                let ys: Vec<f64> = cfg.params.iter().skip(1).step_by(2).copied().collect();
                CostFunction::tabulated(xs, ys)
            }
            other => Err(ModelError::Config(format!("unknown cost family '{other}'"))),
        }
    }

    pub fn to_config(&self) -> CostConfig {
        match self {
            CostFunction::Power { exponent, scale } => CostConfig {
                family: "power".into(),
                params: vec![*exponent, *scale],
            },
            CostFunction::ExpNormalized => CostConfig {
                family: "exp-normalized".into(),
                params: vec![],
            },
            CostFunction::Tabulated(p) => CostConfig {
                family: "tabulated".into(),
                params: p
                    .xs
                    .iter()
                    .zip(&p.ys)
                    .flat_map(|(&x, &y)| [x, y])
                    .collect(),
            },
        }
    }
}

/// `coeff * e^k` with the conventions a monomial derivative needs: a zero
/// coefficient kills the term before `0^negative` can poison it, and `k = 0`
/// is exact.
fn pow_term(coeff: f64, e: f64, k: f64) -> f64 {
    if coeff == 0.0 {
        0.0
    } else if k == 0.0 {
        coeff
    } else {
        coeff * e.powf(k)
    }
}

/// Monotone cubic Hermite interpolant (Fritsch–Carlson slopes).
#[derive(Debug, Clone, PartialEq)]
pub struct Pchip {
    xs: Vec<f64>,
    ys: Vec<f64>,
    ms: Vec<f64>,
}

impl Pchip {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self, ModelError> {
        if xs.len() != ys.len() || xs.len() < 2 {
            return Err(ModelError::Config(
                "tabulated cost needs >= 2 (x, y) knots".into(),
            ));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ModelError::Config("tabulated knots must be ascending".into()));
        }
        let n = xs.len();
        let mut deltas = Vec::with_capacity(n - 1);
        for i in 0..n - 1 {
            deltas.push((ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]));
        }
        let mut ms = vec![0.0; n];
        ms[0] = deltas[0];
        ms[n - 1] = deltas[n - 2];
        for i in 1..n - 1 {
            if deltas[i - 1] * deltas[i] > 0.0 {
                // Harmonic mean weighted by interval widths keeps the
                // interpolant monotone on monotone data.
                let w1 = 2.0 * (xs[i + 1] - xs[i]) + (xs[i] - xs[i - 1]);
                let w2 = (xs[i + 1] - xs[i]) + 2.0 * (xs[i] - xs[i - 1]);
                ms[i] = (w1 + w2) / (w1 / deltas[i - 1] + w2 / deltas[i]);
            }
        }
        Ok(Pchip { xs, ys, ms })
    }

    fn segment(&self, x: f64) -> usize {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return 0;
        }
        if x >= self.xs[n - 1] {
            return n - 2;
        }
        self.xs.partition_point(|&k| k <= x) - 1
    }

    fn coeffs(&self, i: usize) -> (f64, f64, f64, f64, f64) {
        let h = self.xs[i + 1] - self.xs[i];
        let (y0, y1) = (self.ys[i], self.ys[i + 1]);
        let (m0, m1) = (self.ms[i], self.ms[i + 1]);
        // Cubic in t = (x - x_i)/h: a t^3 + b t^2 + c t + d.
        let a = 2.0 * (y0 - y1) + h * (m0 + m1);
        let b = -3.0 * (y0 - y1) - h * (2.0 * m0 + m1);
        let c = h * m0;
        (a, b, c, y0, h)
    }

    pub fn value(&self, x: f64) -> f64 {
        let i = self.segment(x);
        let (a, b, c, d, h) = self.coeffs(i);
        let t = (x - self.xs[i]) / h;
        ((a * t + b) * t + c) * t + d
    }

    pub fn d1(&self, x: f64) -> f64 {
        let i = self.segment(x);
        let (a, b, c, _, h) = self.coeffs(i);
        let t = (x - self.xs[i]) / h;
        ((3.0 * a * t + 2.0 * b) * t + c) / h
    }

    pub fn d2(&self, x: f64) -> f64 {
        let i = self.segment(x);
        let (a, b, _, _, h) = self.coeffs(i);
        let t = (x - self.xs[i]) / h;
        (6.0 * a * t + 2.0 * b) / (h * h)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostConfig {
    pub family: String,
    #[serde(default)]
    pub params: Vec<f64>,
}

/// The primitives of the problem: type span, evidence budget `tau`, both
/// effort costs and the Appendix-style `kappa` scaling of the principal's
/// cost (`c_P = kappa * cost_principal`).
#[derive(Debug, Clone)]
pub struct Environment {
    pub x_lo: f64,
    pub x_hi: f64,
    pub tau: f64,
    pub cost_agent: CostFunction,
    pub cost_principal: CostFunction,
    pub kappa: f64,
}

impl Environment {
    /// Validating constructor: rejects malformed spans/costs and any
    /// environment that fails the maintained assumptions.
    pub fn new(
        x_lo: f64,
        x_hi: f64,
        tau: f64,
        cost_agent: CostFunction,
        cost_principal: CostFunction,
        kappa: f64,
    ) -> Result<Self, ModelError> {
        let env = Self::new_unchecked(x_lo, x_hi, tau, cost_agent, cost_principal, kappa)?;
        env.cost_agent.validate()?;
        env.cost_principal.validate()?;
        let report = check_assumptions(&env);
        if !report.all_pass() {
            return Err(ModelError::Assumptions(report.failures()));
        }
        Ok(env)
    }

    /// Range checks only; assumption and cost-shape gates are skipped so
    /// deliberately broken environments can be built for diagnostics.
    pub fn new_unchecked(
        x_lo: f64,
        x_hi: f64,
        tau: f64,
        cost_agent: CostFunction,
        cost_principal: CostFunction,
        kappa: f64,
    ) -> Result<Self, ModelError> {
        if !(x_lo >= 0.0 && x_hi > x_lo && x_hi.is_finite()) {
            return Err(ModelError::Config(format!(
                "need 0 <= x_lo < x_hi, got [{x_lo}, {x_hi}]"
            )));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(ModelError::Config(format!("need tau > 0, got {tau}")));
        }
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(ModelError::Config(format!("need kappa > 0, got {kappa}")));
        }
        Ok(Environment {
            x_lo,
            x_hi,
            tau,
            cost_agent,
            cost_principal,
            kappa,
        })
    }

    /// The calibrated example environment: types on [0, 1], tau = 1,
    /// normalized-exponential agent cost and nearly linear principal cost
    /// `e^1.01 / 1.01`.
    pub fn figure1() -> Self {
        Self::new(
            0.0,
            1.0,
            1.0,
            CostFunction::ExpNormalized,
            CostFunction::power(1.01, 1.0 / 1.01),
            1.0,
        )
        .expect("calibrated example satisfies the maintained assumptions")
    }

    pub fn span(&self) -> f64 {
        self.x_hi - self.x_lo
    }

    pub fn grid(&self, n: usize) -> Vec<f64> {
        num::linspace(self.x_lo, self.x_hi, n)
    }

    #[inline]
    pub fn c_a(&self, e: f64) -> f64 {
        self.cost_agent.value(e)
    }

    #[inline]
    pub fn c_a_d1(&self, e: f64) -> f64 {
        self.cost_agent.d1(e)
    }

    #[inline]
    pub fn c_a_d2(&self, e: f64) -> f64 {
        self.cost_agent.d2(e)
    }

    #[inline]
    pub fn c_a_d3(&self, e: f64) -> f64 {
        self.cost_agent.d3(e)
    }

    #[inline]
    pub fn c_p(&self, e: f64) -> f64 {
        self.kappa * self.cost_principal.value(e)
    }

    #[inline]
    pub fn c_p_d1(&self, e: f64) -> f64 {
        self.kappa * self.cost_principal.d1(e)
    }

    #[inline]
    pub fn c_p_d2(&self, e: f64) -> f64 {
        self.kappa * self.cost_principal.d2(e)
    }

    /// Evidence rent `u_A(e) = e c_A'(e) - c_A(e)`: what obedient evidence
    /// production is worth to the agent over and above its cost.
    #[inline]
    pub fn rent(&self, e: f64) -> f64 {
        e * self.c_a_d1(e) - self.c_a(e)
    }

    /// `u_A'(e) = e c_A''(e)`.
    #[inline]
    pub fn rent_d1(&self, e: f64) -> f64 {
        e * self.c_a_d2(e)
    }

    /// `u_A''(e) = c_A''(e) + e c_A'''(e)`.
    #[inline]
    pub fn rent_d2(&self, e: f64) -> f64 {
        self.c_a_d2(e) + e * self.c_a_d3(e)
    }

    pub fn from_json(json: &str) -> Result<Self, ModelError> {
        let cfg: EnvConfig = serde_json::from_str(json)
            .map_err(|e| ModelError::Config(format!("bad environment JSON: {e}")))?;
        cfg.build()
    }

    pub fn to_json(&self) -> String {
        let cfg = EnvConfig {
            x_lo: self.x_lo,
            x_hi: self.x_hi,
            tau: self.tau,
            c_a: self.cost_agent.to_config(),
            c_p: self.cost_principal.to_config(),
            kappa: Some(self.kappa),
            dist: None,
        };
        serde_json::to_string_pretty(&cfg).expect("environment config serializes")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvConfig {
    pub x_lo: f64,
    pub x_hi: f64,
    pub tau: f64,
    #[serde(rename = "c_A")]
    pub c_a: CostConfig,
    #[serde(rename = "c_P")]
    pub c_p: CostConfig,
    #[serde(default)]
    pub kappa: Option<f64>,
    /// Optional type distribution; defaults to uniform on the span.
    #[serde(default)]
    pub dist: Option<DistConfig>,
}

impl EnvConfig {
    pub fn build(&self) -> Result<Environment, ModelError> {
        Environment::new(
            self.x_lo,
            self.x_hi,
            self.tau,
            CostFunction::from_config(&self.c_a)?,
            CostFunction::from_config(&self.c_p)?,
            self.kappa.unwrap_or(1.0),
        )
    }

    pub fn build_unchecked(&self) -> Result<Environment, ModelError> {
        Environment::new_unchecked(
            self.x_lo,
            self.x_hi,
            self.tau,
            CostFunction::from_config(&self.c_a)?,
            CostFunction::from_config(&self.c_p)?,
            self.kappa.unwrap_or(1.0),
        )
    }

    pub fn distribution(&self, env: &Environment) -> Result<TypeDistribution, ModelError> {
        match &self.dist {
            None => TypeDistribution::uniform(env.x_lo, env.x_hi),
            Some(d) => d.build(env),
        }
    }
}

/// Evidence rent as a checked operation (domain-validated `e_A`).
pub fn evidence_rent(env: &Environment, e_a: f64) -> Result<f64, ModelError> {
    check_unit("e_A", e_a)?;
    Ok(env.rent(e_a))
}

/// Efficient agent effort: the unique minimizer of
/// `c_A(e) + (1 - e) c_P(e_P)`, i.e. the root of `c_A'(e) = c_P(e_P)`.
pub fn efficient_effort(env: &Environment, e_p: f64) -> Result<f64, ModelError> {
    check_unit("e_P", e_p)?;
    let target = env.c_p(e_p);
    if target <= 0.0 {
        return Ok(0.0);
    }
    if env.c_a_d1(1.0) <= target {
        return Ok(1.0);
    }
    let e = num::bisect_root(|e| env.c_a_d1(e) - target, 0.0, 1.0, 1e-13);
    debug_assert!((env.c_a_d1(e) - target).abs() <= tol::ROOT_RESIDUAL);
    Ok(e)
}

fn check_unit(what: &'static str, v: f64) -> Result<(), ModelError> {
    if !(0.0..=1.0).contains(&v) || v.is_nan() {
        return Err(ModelError::Domain {
            what,
            value: v,
            lo: 0.0,
            hi: 1.0,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionCheck {
    pub pass: bool,
    pub min_slack: f64,
    pub witness: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    /// `tau >= c_A'(1) > c_P(1)`: the tax can fund certain evidence and the
    /// principal's full audit is cheaper than the agent's marginal evidence.
    pub budget: AssumptionCheck,
    /// Bounds the log-convexity of the rent across agent efforts.
    pub regularity: AssumptionCheck,
    /// `e c_A'(e)` strictly convex: `2 c_A''(e) + e c_A'''(e) > 0`.
    pub rent_regularity: AssumptionCheck,
    /// True when any cost is tabulated (third derivatives are approximate).
    pub approximate: bool,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.budget.pass && self.regularity.pass && self.rent_regularity.pass
    }

    pub fn failures(&self) -> String {
        let mut out = Vec::new();
        for (name, check) in [
            ("budget", &self.budget),
            ("regularity", &self.regularity),
            ("rent_regularity", &self.rent_regularity),
        ] {
            if !check.pass {
                out.push(format!(
                    "{name} (slack {:.3e}{})",
                    check.min_slack,
                    check
                        .witness
                        .as_deref()
                        .map(|w| format!(" at {w}"))
                        .unwrap_or_default()
                ));
            }
        }
        out.join("; ")
    }
}

/// Evaluate the three maintained assumptions on a 1001-point effort grid.
///
/// Weak inequalities pass down to `-ASSUMPTION_SLACK`; strict ones require
/// `+ASSUMPTION_SLACK`. The regularity inequality is stated strictly but the
/// calibrated example attains it with equality at `e_A = 0`, so it is tested
/// weakly; rent regularity stays strict (a linear agent cost must fail it).
pub fn check_assumptions(env: &Environment) -> AssumptionReport {
    let cap = env.c_a_d1(1.0);
    let s1 = env.tau - cap; // weak
    let s2 = cap - env.c_p(1.0); // strict
    let budget_pass = s1 >= -tol::ASSUMPTION_SLACK && s2 >= tol::ASSUMPTION_SLACK;
    let budget = AssumptionCheck {
        pass: budget_pass,
        min_slack: s1.min(s2),
        witness: if budget_pass {
            None
        } else if s1 < -tol::ASSUMPTION_SLACK {
            Some(format!("tau = {} < c_A'(1) = {}", env.tau, cap))
        } else {
            Some(format!("c_A'(1) = {} <= c_P(1) = {}", cap, env.c_p(1.0)))
        },
    };

    let lead = (env.x_lo + env.tau) / env.c_p_d1(1.0);
    let mut reg_min = f64::INFINITY;
    let mut reg_witness = None;
    let mut rent_min = f64::INFINITY;
    let mut rent_witness = None;
    for i in 0..=1000 {
        let e = i as f64 / 1000.0;
        let d2 = env.c_a_d2(e);
        let d3 = env.c_a_d3(e);
        // e(1-e) c_A'''/c_A'': zero at the endpoints regardless of the ratio,
        // and a vanishing ratio (linear cost) contributes nothing.
        let curb = if e == 0.0 || e == 1.0 || (d2 == 0.0 && d3 == 0.0) {
            0.0
        } else {
            e * (1.0 - e) * (d3 / d2)
        };
        let reg_slack = lead + e - curb - (1.0 - e);
        if reg_slack < reg_min {
            reg_min = reg_slack;
        }
        if reg_witness.is_none() && reg_slack < -tol::ASSUMPTION_SLACK {
            reg_witness = Some(format!("e_A = {e}"));
        }
        let rent_slack = 2.0 * d2 + e * d3;
        if rent_slack < rent_min {
            rent_min = rent_slack;
        }
        if rent_witness.is_none() && rent_slack < tol::ASSUMPTION_SLACK {
            rent_witness = Some(format!("e_A = {e}"));
        }
    }
    let regularity = AssumptionCheck {
        pass: reg_min >= -tol::ASSUMPTION_SLACK,
        min_slack: reg_min,
        witness: reg_witness,
    };
    let rent_regularity = AssumptionCheck {
        pass: rent_min >= tol::ASSUMPTION_SLACK,
        min_slack: rent_min,
        witness: rent_witness,
    };
    AssumptionReport {
        budget,
        regularity,
        rent_regularity,
        approximate: env.cost_agent.is_approximate() || env.cost_principal.is_approximate(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GlobalConcavityReport {
    /// True when all three composite expressions test convex on the grid,
    /// i.e. the reduced profit is concave over the effort box.
    pub concave: bool,
    /// Largest eigenvalue of any concave-form Hessian encountered (wants <= tolerance).
    pub worst_eigenvalue: f64,
    pub slope_ratio_bounded: bool,
    pub max_slope_ratio: f64,
    /// Upper bound on the profit's effort derivative at the box edge;
    /// negative means kappa is small enough that no maximizer escapes the box.
    pub kappa_bound: f64,
    pub first_violation: Option<String>,
}

/// Test the global-concavity condition: the reduced profit is a pointwise
/// infimum of three composite expressions, and it is concave on
/// `[0, e_bar] x Lambda` when each expression is convex in its own arguments.
/// Convexity is checked by trace/determinant on analytic Hessians over a grid
/// of (effort, chord slope) and (effort, surplus gap, type) points.
pub fn check_global_concavity(env: &Environment, e_bar: f64) -> GlobalConcavityReport {
    let k = env.kappa;
    let base = &env.cost_principal;
    // Quadratic extension below zero: c''(w) frozen at c''(0). Chord slopes
    // below zero arise when the loss dips under the pivot type.
    let c2_0 = base.d2(0.0);
    let c1_0 = base.d1(0.0);
    let ext_c1 = |w: f64| {
        if w >= 0.0 {
            base.d1(w)
        } else {
            c1_0 + c2_0 * w
        }
    };
    let ext_c2 = |w: f64| if w >= 0.0 { base.d2(w) } else { c2_0 };

    let mut worst_eig = f64::NEG_INFINITY;
    let mut first_violation: Option<String> = None;
    // NSD of the concave form = PSD of the convex form; track via
    // (h11, h12, h22) of the convex form and flip signs for the eigenvalue.
    let mut absorb = |h11: f64, h12: f64, h22: f64, label: &str| {
        let tr = h11 + h22;
        let det = h11 * h22 - h12 * h12;
        let disc = (tr * tr - 4.0 * det).max(0.0).sqrt();
        // Largest eigenvalue of the NEGATED (concave-side) Hessian.
        let eig = (-tr + disc) / 2.0;
        let eig = if eig.is_nan() { f64::INFINITY } else { eig };
        if eig > worst_eig {
            worst_eig = eig;
        }
        let psd = h11 >= -tol::HESSIAN && h22 >= -tol::HESSIAN && det >= -tol::HESSIAN;
        if !psd && first_violation.is_none() {
            first_violation = Some(label.to_string());
        }
    };

    // First two expressions: Hessians in (effort, chord slope) coordinates.
    // The positive 1/(x - y) scaling of the slope argument is a congruence
    // and cannot change definiteness, so x and y drop out entirely.
    for i in 0..=32 {
        let e = e_bar * i as f64 / 32.0;
        let ca2 = env.c_a_d2(e);
        let ua2 = env.rent_d2(e);
        for j in 0..=32 {
            let w = -1.0 + 2.0 * j as f64 / 32.0;
            let h12 = -k * ext_c1(w);
            let h22 = (1.0 - e) * k * ext_c2(w);
            absorb(
                ua2 + ca2,
                h12,
                h22,
                &format!("expr1 at e={e:.3}, w={w:.3}"),
            );
            absorb(ca2, h12, h22, &format!("expr2 at e={e:.3}, w={w:.3}"));
        }
    }

    // Third expression in (effort, retained-surplus gap d); the slope
    // argument is (d - u_A(e))/(x + tau), so the effort axis mixes in.
    for xi in 0..=8 {
        let x = env.x_lo + env.span() * xi as f64 / 8.0;
        let b = 1.0 / (x + env.tau);
        for i in 0..=16 {
            let e = e_bar * i as f64 / 16.0;
            let ca2 = env.c_a_d2(e);
            let u1 = env.rent_d1(e);
            let u2 = env.rent_d2(e);
            for j in 0..=16 {
                let d = env.span() * j as f64 / 16.0;
                let w = (d - env.rent(e)) * b;
                if w > 1.0 {
                    // Beyond unit audit effort; never reached in use.
                    continue;
                }
                let c1 = ext_c1(w);
                let c2 = ext_c2(w);
                let h11 = ca2 + 2.0 * k * c1 * u1 * b + (1.0 - e) * k * c2 * u1 * u1 * b * b
                    - (1.0 - e) * k * c1 * u2 * b;
                let h12 = -k * c1 * b - (1.0 - e) * k * c2 * u1 * b * b;
                let h22 = (1.0 - e) * k * c2 * b * b;
                absorb(
                    h11,
                    h12,
                    h22,
                    &format!("expr3 at x={x:.3}, e={e:.3}, d={d:.3}"),
                );
            }
        }
    }

    let mut max_ratio = 0.0f64;
    for i in 1..=1000 {
        let e = i as f64 / 1000.0;
        let d2 = base.d2(e);
        let r = if d2 > 0.0 {
            base.d1(e) / d2
        } else {
            f64::INFINITY
        };
        if r > max_ratio {
            max_ratio = r;
        }
    }

    let eb = &env; // kappa already applied by c_p/c_p_d1
    let kappa_bound = -eb.c_a_d1(e_bar)
        + eb.c_p(1.0)
        + (1.0 - e_bar) * eb.c_p_d1(1.0) * eb.rent(e_bar) / (eb.x_lo + eb.tau);

    GlobalConcavityReport {
        concave: first_violation.is_none(),
        worst_eigenvalue: worst_eig,
        slope_ratio_bounded: max_ratio.is_finite(),
        max_slope_ratio: max_ratio,
        kappa_bound,
        first_violation,
    }
}

/// Type distribution on the support; full support is required wherever the
/// distribution weights an optimality search.
#[derive(Debug, Clone)]
pub enum TypeDistribution {
    Uniform {
        lo: f64,
        hi: f64,
    },
    TruncExp {
        lo: f64,
        hi: f64,
        rate: f64,
    },
    Tabulated {
        xs: Vec<f64>,
        fs: Vec<f64>,
        cdf: Vec<f64>,
    },
}

impl TypeDistribution {
    pub fn uniform(lo: f64, hi: f64) -> Result<Self, ModelError> {
        if !(hi > lo) {
            return Err(ModelError::Config("uniform support needs lo < hi".into()));
        }
        Ok(TypeDistribution::Uniform { lo, hi })
    }

    pub fn trunc_exp(lo: f64, hi: f64, rate: f64) -> Result<Self, ModelError> {
        if !(hi > lo) || rate == 0.0 || !rate.is_finite() {
            return Err(ModelError::Config(
                "truncated exponential needs lo < hi and nonzero rate".into(),
            ));
        }
        Ok(TypeDistribution::TruncExp { lo, hi, rate })
    }

    /// Piecewise-linear density through the given knots, normalized to unit
    /// trapezoid mass.
    pub fn tabulated(xs: Vec<f64>, fs: Vec<f64>) -> Result<Self, ModelError> {
        if xs.len() != fs.len() || xs.len() < 2 {
            return Err(ModelError::Config("tabulated density needs >= 2 knots".into()));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ModelError::Config("density knots must be ascending".into()));
        }
        if fs.iter().any(|&f| !(f > 0.0)) {
            return Err(ModelError::Config(
                "tabulated density must be positive (full support)".into(),
            ));
        }
        let mass = num::trapezoid(&xs, &fs);
        let fs: Vec<f64> = fs.iter().map(|f| f / mass).collect();
        let mut cdf = Vec::with_capacity(xs.len());
        let mut acc = 0.0;
        cdf.push(0.0);
        for i in 1..xs.len() {
            acc += 0.5 * (fs[i] + fs[i - 1]) * (xs[i] - xs[i - 1]);
            cdf.push(acc);
        }
        debug_assert!((acc - 1.0).abs() <= tol::DIST_MASS);
        Ok(TypeDistribution::Tabulated { xs, fs, cdf })
    }

    pub fn support(&self) -> (f64, f64) {
        match self {
            TypeDistribution::Uniform { lo, hi } => (*lo, *hi),
            TypeDistribution::TruncExp { lo, hi, .. } => (*lo, *hi),
            TypeDistribution::Tabulated { xs, .. } => (xs[0], xs[xs.len() - 1]),
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        match self {
            TypeDistribution::Uniform { lo, hi } => {
                if x < *lo || x > *hi {
                    0.0
                } else {
                    1.0 / (hi - lo)
                }
            }
            TypeDistribution::TruncExp { lo, hi, rate } => {
                if x < *lo || x > *hi {
                    0.0
                } else {
                    rate * (-rate * (x - lo)).exp() / (1.0 - (-rate * (hi - lo)).exp())
                }
            }
            TypeDistribution::Tabulated { xs, fs, .. } => {
                if x < xs[0] || x > xs[xs.len() - 1] {
                    0.0
                } else {
                    num::interp(xs, fs, x)
                }
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            TypeDistribution::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
            TypeDistribution::TruncExp { lo, hi, rate } => {
                let t = ((x - lo) / (hi - lo)).clamp(0.0, 1.0) * (hi - lo);
                (1.0 - (-rate * t).exp()) / (1.0 - (-rate * (hi - lo)).exp())
            }
            TypeDistribution::Tabulated { xs, fs, cdf } => {
                if x <= xs[0] {
                    return 0.0;
                }
                if x >= xs[xs.len() - 1] {
                    return 1.0;
                }
                let i = xs.partition_point(|&k| k <= x) - 1;
                let h = x - xs[i];
                let f_x = num::interp(xs, fs, x);
                cdf[i] + 0.5 * (fs[i] + f_x) * h
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistConfig {
    pub family: String,
    #[serde(default)]
    pub params: Vec<f64>,
}

impl DistConfig {
    pub fn build(&self, env: &Environment) -> Result<TypeDistribution, ModelError> {
        match self.family.as_str() {
            "uniform" => TypeDistribution::uniform(env.x_lo, env.x_hi),
            "truncated-exponential" | "trunc_exp" => {
                let rate = *self.params.first().ok_or_else(|| {
                    ModelError::Config("truncated-exponential needs params [rate]".into())
                })?;
                TypeDistribution::trunc_exp(env.x_lo, env.x_hi, rate)
            }
            "tabulated" => {
                if self.params.len() < 4 || self.params.len() % 2 != 0 {
                    return Err(ModelError::Config(
                        "tabulated density needs interleaved params [x0,f0,x1,f1,...]".into(),
                    ));
                }
                let xs: Vec<f64> = self.params.iter().step_by(2).copied().collect();
                let fs: Vec<f64> = self.params.iter().skip(1).step_by(2).copied().collect();
                TypeDistribution::tabulated(xs, fs)
            }
            other => Err(ModelError::Config(format!(
                "unknown distribution family '{other}'"
            ))),
        }
    }
}
