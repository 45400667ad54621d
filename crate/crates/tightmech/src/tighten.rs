//! The solver core: the per-type reduced maximization, canonical refund
//! recovery, the three-step tightening map, interval classification, and the
//! debt-with-relief constructor.
//!
//! Given a loss `λ ∈ Λ`, each type decouples. The principal's value of
//! serving type `y` is the maximum over recommended effort `ẽ` of the
//! envelope `π̄(y, ẽ) = min{π₁, π₂, π₃}(y, ẽ)`, where the three pieces
//! price the binding constraint in the three audit regimes (see
//! [`pi_values`]). The envelope is strictly quasiconcave in `ẽ`, so a scan
//! plus golden-section search finds the unique maximizer; audit effort is
//! then `e_P = max{α(y), β(y, ẽ*)}` and refunds follow in closed form.
//!
//! Tightening maps an arbitrary feasible, incentive-compatible mechanism to
//! a tight one that weakly improves profit and loss pointwise: regularize
//! the induced loss, rebuild its concave envelope through the optimal-refund
//! formula ([`virtual_loss`]), and re-solve every knot.

use serde::Serialize;
use thiserror::Error;

use crate::loss::{LossClass, LossFunction};
use crate::mechanism::{Mechanism, Provenance};
use crate::model::Environment;
use crate::num;
use crate::tol;

#[derive(Debug, Error)]
pub enum SolveError {
    /// The per-type envelope failed its shape certificate; carries the type
    /// at which the solver gave up.
    #[error("solver failed at y = {y}: {what}")]
    SolverFailure { y: f64, what: String },
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    #[error("classification ambiguity: {0}")]
    ClassificationAmbiguity(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("{what} = {value} outside [{lo}, {hi}]")]
    Domain {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
}

/// Which envelope piece binds at the solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    R1,
    R2,
    R3,
}

/// Solution of the reduced per-type problem.
#[derive(Debug, Clone, Copy)]
pub struct ReducedSolution {
    pub y: f64,
    pub e_a_star: f64,
    pub e_p_star: f64,
    pub profit: f64,
    pub regime: Regime,
    /// `d₁ = y − u_A(ẽ*) − λ(y)`: margin of the middle-or-higher regimes.
    pub d1: f64,
    /// `d₂ = (1−α)y − u_A(ẽ*) − λ(y) − ατ`: margin of the super-high regime.
    pub d2: f64,
}

/// Knot label in the five-interval partition. Ordered: every tight mechanism
/// walks these left to right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RegionLabel {
    EpOne,
    SuperLow,
    Low,
    Middle,
    High,
    SuperHigh,
    EpZero,
}

impl RegionLabel {
    fn interior_rank(self) -> Option<usize> {
        match self {
            RegionLabel::SuperLow => Some(0),
            RegionLabel::Low => Some(1),
            RegionLabel::Middle => Some(2),
            RegionLabel::High => Some(3),
            RegionLabel::SuperHigh => Some(4),
            _ => None,
        }
    }

    fn from_interior_rank(r: usize) -> Self {
        match r {
            0 => RegionLabel::SuperLow,
            1 => RegionLabel::Low,
            2 => RegionLabel::Middle,
            3 => RegionLabel::High,
            _ => RegionLabel::SuperHigh,
        }
    }
}

/// The five interior intervals plus the exterior `e_P = 1` / `e_P = 0`
/// regions, with a label per grid knot.
#[derive(Debug, Clone)]
pub struct IntervalPartition {
    grid: Vec<f64>,
    labels: Vec<RegionLabel>,
    intervals: [Option<(f64, f64)>; 5],
    ep_one: (f64, f64),
    ep_zero: (f64, f64),
}

#[derive(Serialize)]
struct IntervalJson {
    #[serde(rename = "I_SL")]
    i_sl: Option<(f64, f64)>,
    #[serde(rename = "I_L")]
    i_l: Option<(f64, f64)>,
    #[serde(rename = "I_M")]
    i_m: Option<(f64, f64)>,
    #[serde(rename = "I_H")]
    i_h: Option<(f64, f64)>,
    #[serde(rename = "I_SH")]
    i_sh: Option<(f64, f64)>,
    ep_one_region: (f64, f64),
    ep_zero_region: (f64, f64),
}

impl IntervalPartition {
    pub fn labels(&self) -> &[RegionLabel] {
        &self.labels
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// `[inf, sup]` of an interior interval, when its regime was detected on
    /// the grid. Adjacent intervals share endpoints (the regimes tile the
    /// interior block); the shared endpoint sits on the last knot of the
    /// earlier regime, so an interval's own knots lie in its half-open right
    /// part. Consult [`Self::labels`] for knot-exact membership.
    pub fn interval(&self, label: RegionLabel) -> Option<(f64, f64)> {
        label.interior_rank().and_then(|r| self.intervals[r])
    }

    /// Half-open `[x̲, inf I_SL)` region where `e_P = 1`; collapses to
    /// `[x̲, x̲)` when audits are interior from the start.
    pub fn ep_one_region(&self) -> (f64, f64) {
        self.ep_one
    }

    /// Closed `[sup I_SH, x̄]` region where `e_P = 0`.
    pub fn ep_zero_region(&self) -> (f64, f64) {
        self.ep_zero
    }

    pub fn knots_in(&self, label: RegionLabel) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&i| self.labels[i] == label)
            .collect()
    }

    pub fn to_json(&self) -> String {
        let j = IntervalJson {
            i_sl: self.intervals[0],
            i_l: self.intervals[1],
            i_m: self.intervals[2],
            i_h: self.intervals[3],
            i_sh: self.intervals[4],
            ep_one_region: self.ep_one,
            ep_zero_region: self.ep_zero,
        };
        serde_json::to_string_pretty(&j).expect("interval report serializes")
    }
}

fn require_lambda(lam: &LossFunction) -> Result<(), SolveError> {
    if lam.class() != LossClass::Lambda {
        return Err(SolveError::InvariantViolation(
            "operation needs a Lambda-class loss; regularize and tighten first".into(),
        ));
    }
    Ok(())
}

fn check_y(lam: &LossFunction, y: f64) -> Result<(), SolveError> {
    if !(lam.x_lo() - 1e-9..=lam.x_hi() + 1e-9).contains(&y) {
        return Err(SolveError::Domain {
            what: "y",
            value: y,
            lo: lam.x_lo(),
            hi: lam.x_hi(),
        });
    }
    Ok(())
}

/// The three auxiliary profits at `(y, ẽ)` and their lower envelope:
/// `π₁ = y − u_A(ẽ) − c_A(ẽ) − (1−ẽ)c_P(α(y))` (middle regimes, the agent
/// keeps no more than the evidence rent), `π₂` replaces the collected `y`
/// with `λ(y)` (low regimes), and `π₃` additionally prices audits at
/// `β(y, ẽ)` (super-high regime).
pub fn pi_values(
    env: &Environment,
    lam: &LossFunction,
    y: f64,
    e_a: f64,
) -> Result<(f64, f64, f64, f64), SolveError> {
    require_lambda(lam)?;
    check_y(lam, y)?;
    if !(0.0..=1.0).contains(&e_a) {
        return Err(SolveError::Domain {
            what: "e_A",
            value: e_a,
            lo: 0.0,
            hi: 1.0,
        });
    }
    let alpha = lam.alpha(y).expect("y already range-checked");
    let cp_alpha = env.c_p(alpha);
    let lam_y = lam.eval(y).expect("y already range-checked");
    let (p1, p2, p3) = pi_parts(env, lam, y, lam_y, cp_alpha, e_a);
    Ok((p1, p2, p3, p1.min(p2).min(p3)))
}

#[inline]
fn pi_parts(
    env: &Environment,
    lam: &LossFunction,
    y: f64,
    lam_y: f64,
    cp_alpha: f64,
    e: f64,
) -> (f64, f64, f64) {
    let rent = env.rent(e);
    let c_a = env.c_a(e);
    let idle = 1.0 - e;
    let beta = beta_from_floor(env, lam, lam_y + rent);
    let p1 = y - rent - c_a - idle * cp_alpha;
    let p2 = lam_y - c_a - idle * cp_alpha;
    let p3 = lam_y - c_a - idle * env.c_p(beta);
    (p1, p2, p3)
}

/// `β` with the `λ(y) + u_A(ẽ)` floor precomputed; the hot path for the
/// envelope search.
#[inline]
fn beta_from_floor(env: &Environment, lam: &LossFunction, floor: f64) -> f64 {
    let mut best = 0.0f64;
    let (grid, values) = (lam.grid(), lam.values());
    for i in 0..grid.len() {
        let r = (values[i] - floor) / (grid[i] + env.tau);
        if r > best {
            best = r;
        }
    }
    best
}

/// Maximize the envelope `π̄(y, ·)` over recommended effort. A 101-point
/// scan certifies the strict-quasiconcavity shape the theory promises (rise
/// then fall, up to 1e-11 of noise); golden-section search then localizes
/// the maximizer inside the bracketing cell.
pub fn solve_type(env: &Environment, lam: &LossFunction, y: f64) -> Result<ReducedSolution, SolveError> {
    require_lambda(lam)?;
    check_y(lam, y)?;
    let alpha = lam.alpha(y).expect("y already range-checked");
    let cp_alpha = env.c_p(alpha);
    let lam_y = lam.eval(y).expect("y already range-checked");
    let envelope = |e: f64| {
        let (p1, p2, p3) = pi_parts(env, lam, y, lam_y, cp_alpha, e);
        p1.min(p2).min(p3)
    };

    const SCAN: usize = 101;
    let mut best_k = 0usize;
    let mut best_val = f64::NEG_INFINITY;
    let mut scan = [0.0f64; SCAN];
    for (k, slot) in scan.iter_mut().enumerate() {
        *slot = envelope(k as f64 / (SCAN - 1) as f64);
        if *slot > best_val {
            best_val = *slot;
            best_k = k;
        }
    }
    for k in 0..SCAN - 1 {
        let (a, b) = (scan[k], scan[k + 1]);
        let ok = if k < best_k { b >= a - 1e-11 } else { b <= a + 1e-11 };
        if !ok {
            return Err(SolveError::SolverFailure {
                y,
                what: format!(
                    "effort envelope is not unimodal near e = {:.2} (values {a} vs {b})",
                    k as f64 / (SCAN - 1) as f64
                ),
            });
        }
    }
    let lo = if best_k == 0 { 0.0 } else { (best_k - 1) as f64 / (SCAN - 1) as f64 };
    let hi = if best_k == SCAN - 1 { 1.0 } else { (best_k + 1) as f64 / (SCAN - 1) as f64 };
    let (mut e_star, mut profit) = num::golden_max(envelope, lo, hi, tol::GOLDEN_WIDTH);
    // Golden section cannot localize a smooth maximizer below the f64
    // comparison-noise radius ~ sqrt(eps·|π̄|/|π̄″|) ≈ 3e-8, and downstream
    // first-order residuals scale that noise by 1/u_A′(e*), which blows up
    // where e* is tiny (top types). One parabolic step through ±h recovers
    // the quadratic signal (|π̄″|h² ≫ eps·|π̄|) and pins the vertex to ~1e-11;
    // at a kink maximizer the fit is meaningless, so keep the move only if
    // it does not lose value.
    let h = 1e-5;
    if e_star > h && e_star < 1.0 - h {
        let (fm, fp) = (envelope(e_star - h), envelope(e_star + h));
        let curv = fm - 2.0 * profit + fp;
        if curv < 0.0 {
            let step = (0.5 * h * (fm - fp) / curv).clamp(-h, h);
            let cand = e_star + step;
            let fc = envelope(cand);
            if fc >= profit {
                e_star = cand;
                profit = fc;
            }
        }
    }
    if e_star < 1e-8 {
        // golden-section stops within its width of a corner maximizer; snap
        // so downstream classification and refunds see the exact zero.
        e_star = 0.0;
        profit = envelope(0.0);
    }
    if e_star >= 1.0 - 1e-9 {
        return Err(SolveError::SolverFailure {
            y,
            what: "maximizer pinned at e_A = 1, excluded under the budget assumption".into(),
        });
    }

    let rent = env.rent(e_star);
    let beta = beta_from_floor(env, lam, lam_y + rent);
    let e_p_star = alpha.max(beta);
    let (p1, p2, p3) = pi_parts(env, lam, y, lam_y, cp_alpha, e_star);
    let regime = if p1 < p2.min(p3) - 1e-12 {
        Regime::R1
    } else if p3 < p1.min(p2) - 1e-12 {
        Regime::R3
    } else {
        Regime::R2
    };
    Ok(ReducedSolution {
        y,
        e_a_star: e_star,
        e_p_star,
        profit,
        regime,
        d1: y - rent - lam_y,
        d2: (1.0 - alpha) * y - rent - lam_y - alpha * env.tau,
    })
}

/// Canonical refunds implementing the reduced solution:
/// `(1−e_P)(y−r_∅) = min{(1−e_P)y, λ(y)+u_A+e_P·τ}`,
/// `e_P(y−r_P) = min{y, λ(y)+u_A} − (1−e_P)(y−r_∅)`,
/// `r_A = c_A′(e_A) + R_NA` (so obedience holds with equality).
pub fn recover_refunds(
    env: &Environment,
    lam: &LossFunction,
    sol: &ReducedSolution,
) -> Result<(f64, f64, f64), SolveError> {
    require_lambda(lam)?;
    let y = sol.y;
    let lam_y = lam.eval(y).map_err(|_| SolveError::Domain {
        what: "y",
        value: y,
        lo: lam.x_lo(),
        hi: lam.x_hi(),
    })?;
    let (e_a, e_p) = (sol.e_a_star, sol.e_p_star);
    let rent = env.rent(e_a);
    let cap = y + env.tau;
    let keep = lam_y + rent; // what the type must be left after concealment
    let (r_p, r_empty) = if e_p <= 0.0 {
        (0.0, (y - keep).max(0.0))
    } else if e_p >= 1.0 {
        ((y - keep).max(0.0), 0.0)
    } else {
        let no_audit_paid = ((1.0 - e_p) * y).min(keep + e_p * env.tau);
        let r_e = y - no_audit_paid / (1.0 - e_p);
        let audit_paid = y.min(keep) - no_audit_paid;
        let r_p = y - audit_paid / e_p;
        (r_p, r_e)
    };
    for (name, r) in [("r_P", r_p), ("r_empty", r_empty)] {
        if !(-tol::REFUND_FEAS..=cap + tol::REFUND_FEAS).contains(&r) {
            return Err(SolveError::InvariantViolation(format!(
                "recovered {name} = {r} at y = {y} leaves [0, {cap}]"
            )));
        }
    }
    let (r_p, r_empty) = (r_p.clamp(0.0, cap), r_empty.clamp(0.0, cap));
    let r_a = env.c_a_d1(e_a) + e_p * r_p + (1.0 - e_p) * r_empty;
    if !(-tol::REFUND_FEAS..=cap + tol::REFUND_FEAS).contains(&r_a) {
        return Err(SolveError::InvariantViolation(format!(
            "recovered r_A = {r_a} at y = {y} leaves [0, {cap}]"
        )));
    }
    Ok((r_a.clamp(0.0, cap), r_p, r_empty))
}

/// Solve every knot of `grid` against `lam` and assemble the tight
/// mechanism. `jobs > 1` splits the per-knot work across threads.
pub fn solve_for_loss(
    env: &Environment,
    lam: &LossFunction,
    grid: &[f64],
    jobs: usize,
) -> Result<Mechanism, SolveError> {
    require_lambda(lam)?;
    let rows = num::par_map(grid.len(), jobs, |i| {
        let sol = solve_type(env, lam, grid[i])?;
        let (r_a, r_p, r_e) = recover_refunds(env, lam, &sol)?;
        Ok::<_, SolveError>((sol, r_a, r_p, r_e))
    });
    let mut e_a = Vec::with_capacity(grid.len());
    let mut e_p = Vec::with_capacity(grid.len());
    let mut r_a = Vec::with_capacity(grid.len());
    let mut r_p = Vec::with_capacity(grid.len());
    let mut r_e = Vec::with_capacity(grid.len());
    for row in rows {
        let (sol, a, p, e) = row?;
        e_a.push(sol.e_a_star);
        e_p.push(sol.e_p_star);
        r_a.push(a);
        r_p.push(p);
        r_e.push(e);
    }
    Mechanism::new(
        env,
        grid.to_vec(),
        e_a,
        e_p,
        r_a,
        r_p,
        r_e,
        Provenance::Constructed,
    )
    .map_err(|e| SolveError::InvariantViolation(format!("assembled mechanism infeasible: {e}")))
}

/// Just the per-knot reduced profits — the inner loop of the outer search,
/// which has no use for refunds.
pub fn profit_schedule(
    env: &Environment,
    lam: &LossFunction,
    grid: &[f64],
    jobs: usize,
) -> Result<Vec<f64>, SolveError> {
    require_lambda(lam)?;
    num::par_map(grid.len(), jobs, |i| Ok(solve_type(env, lam, grid[i])?.profit))
        .into_iter()
        .collect()
}

/// Concave envelope of the regularized loss through the optimal-refund
/// formula: `λ̃(x) = min_y e_P(y)·x + min{(1−e_P(y))·y, λ⁺(y) + u_A(e_A(y))
/// + e_P(y)·τ}` over grid knots `y`. Certified into `Λ`, and never below
/// the input mechanism's own induced loss.
pub fn virtual_loss(
    env: &Environment,
    mech: &Mechanism,
    lam_plus: &LossFunction,
) -> Result<LossFunction, SolveError> {
    if mech.grid() != lam_plus.grid() {
        return Err(SolveError::GridMismatch(
            "mechanism and regularized loss must share their grid".into(),
        ));
    }
    let n = mech.len();
    let tau = env.tau;
    let mut slope = Vec::with_capacity(n);
    let mut intercept = Vec::with_capacity(n);
    for j in 0..n {
        let y = mech.grid()[j];
        let ep = mech.e_p()[j];
        slope.push(ep);
        intercept.push(
            ((1.0 - ep) * y).min(lam_plus.values()[j] + env.rent(mech.e_a()[j]) + ep * tau),
        );
    }
    let values: Vec<f64> = mech
        .grid()
        .iter()
        .map(|&x| {
            (0..n)
                .map(|j| slope[j] * x + intercept[j])
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let lam = LossFunction::lambda(mech.grid().to_vec(), values).map_err(|e| {
        SolveError::InvariantViolation(format!(
            "virtual loss failed class certification ({e}); grid too coarse"
        ))
    })?;
    let induced = mech.induced_loss(env);
    for i in 0..n {
        if lam.values()[i] < induced.values()[i] - tol::MONEY_EQ {
            return Err(SolveError::InvariantViolation(format!(
                "virtual loss dips {} below the induced loss at x = {}",
                induced.values()[i] - lam.values()[i],
                mech.grid()[i]
            )));
        }
    }
    Ok(lam)
}

/// The tightening map: regularize the induced loss, rebuild its admissible
/// envelope, re-solve every knot. The output weakly improves profit and
/// induced loss pointwise and is a fixed point of the map itself.
pub fn tighten(env: &Environment, mech: &Mechanism) -> Result<(Mechanism, LossFunction), SolveError> {
    let report = mech.check_incentives(env);
    if !report.ic_ok || !report.obedience_ok {
        num::debug_log(format_args!(
            "tighten: input violates incentives (worst IC slack {:.3e}, worst FOC residual {:.3e}); proceeding",
            report.worst_slack, report.worst_foc_residual
        ));
    }
    let lam_plus = mech.induced_loss(env).regularize_plus();
    let lam_tilde = virtual_loss(env, mech, &lam_plus)?;
    let tight = solve_for_loss(env, &lam_tilde, mech.grid(), 1)?;
    Ok((tight.with_provenance(Provenance::Tightened), lam_tilde))
}

/// Label every knot where audits are interior by the `(d₁, d₂)` sign
/// pattern, band `±1e-6`: `d₁ < 0` super-low; `d₁ = 0 > d₂` low;
/// `d₂ < 0 < d₁` middle; `d₂ = 0 < d₁` high; `d₂ > 0` super-high. Single-knot
/// blips against the Theorem-1 ordering are absorbed; anything wider is a
/// genuine ambiguity (grid too coarse).
pub fn classify(
    env: &Environment,
    lam: &LossFunction,
    mech_star: &Mechanism,
) -> Result<IntervalPartition, SolveError> {
    require_lambda(lam)?;
    let n = mech_star.len();
    let grid = mech_star.grid().to_vec();
    let band = tol::CLASSIFY_BAND;
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let ep = mech_star.e_p()[i];
        if ep >= 1.0 {
            labels.push(RegionLabel::EpOne);
            continue;
        }
        if ep <= 0.0 {
            labels.push(RegionLabel::EpZero);
            continue;
        }
        let y = grid[i];
        let alpha = lam.alpha(y).expect("mechanism grid lies in the loss span");
        let lam_y = lam.eval(y).expect("mechanism grid lies in the loss span");
        let rent = env.rent(mech_star.e_a()[i]);
        let d1 = y - rent - lam_y;
        let d2 = (1.0 - alpha) * y - rent - lam_y - alpha * env.tau;
        let label = if d1 < -band {
            RegionLabel::SuperLow
        } else if d2 > band {
            RegionLabel::SuperHigh
        } else if d1 <= band {
            RegionLabel::Low
        } else if d2 < -band {
            RegionLabel::Middle
        } else {
            RegionLabel::High
        };
        labels.push(label);
    }

    // Structural checks: interior knots must form one contiguous block
    // between the e_P = 1 prefix and the e_P = 0 suffix.
    let first_interior = labels.iter().position(|l| l.interior_rank().is_some());
    let interior: Vec<usize> = (0..n).filter(|&i| labels[i].interior_rank().is_some()).collect();
    if let (Some(lo), Some(&hi)) = (first_interior, interior.last()) {
        for i in lo..=hi {
            if labels[i].interior_rank().is_none() {
                return Err(SolveError::ClassificationAmbiguity(format!(
                    "audit effort leaves (0,1) at y = {} inside the interior block",
                    grid[i]
                )));
            }
        }
        if labels[..lo].iter().any(|&l| l != RegionLabel::EpOne)
            || labels[hi + 1..].iter().any(|&l| l != RegionLabel::EpZero)
        {
            return Err(SolveError::ClassificationAmbiguity(
                "full and zero audits must bracket the interior block".into(),
            ));
        }

        // Blip repair: a single knot out of order between agreeing or
        // ordered neighbors inherits its left neighbor's label.
        let mut ranks: Vec<usize> = labels[lo..=hi]
            .iter()
            .map(|l| l.interior_rank().unwrap())
            .collect();
        let m = ranks.len();
        if m >= 2 {
            if ranks[0] > ranks[1] {
                ranks[0] = ranks[1];
            }
            for i in 1..m - 1 {
                if ranks[i] < ranks[i - 1] || (ranks[i] > ranks[i + 1] && ranks[i] > ranks[i - 1]) {
                    ranks[i] = ranks[i - 1];
                }
            }
            if ranks[m - 1] < ranks[m - 2] {
                ranks[m - 1] = ranks[m - 2];
            }
        }
        for i in 1..m {
            if ranks[i] < ranks[i - 1] {
                return Err(SolveError::ClassificationAmbiguity(format!(
                    "region order violated beyond one knot of slack at y = {}",
                    grid[lo + i]
                )));
            }
        }
        for (i, r) in ranks.iter().enumerate() {
            labels[lo + i] = RegionLabel::from_interior_rank(*r);
        }
    }

    // Consecutive boundaries: the regimes tile the interior block, so
    // adjacent intervals share an endpoint. The grid resolves each boundary
    // only to one step; we place it at the last knot of the earlier regime,
    // which brackets the true (off-knot) crossing from the left.
    let mut boundary = grid[0];
    if let Some(i) = labels.iter().rposition(|&l| l == RegionLabel::EpOne) {
        boundary = grid[i];
    }
    let ep_one = (grid[0], boundary);
    let mut intervals = [None; 5];
    for (r, slot) in intervals.iter_mut().enumerate() {
        let lab = RegionLabel::from_interior_rank(r);
        if let Some(i) = labels.iter().rposition(|&l| l == lab) {
            *slot = Some((boundary, grid[i]));
            boundary = grid[i];
        }
    }
    Ok(IntervalPartition {
        ep_one,
        ep_zero: (boundary, grid[n - 1]),
        grid,
        labels,
        intervals,
    })
}

/// The calibrated debt constants: recommended effort below the face value
/// minimizes `k(e) = e·c_A′(e) + (1−e)·c_P(1)` (evidence rent plus expected
/// verification burn); the relief refund makes that effort obedient.
#[derive(Debug, Clone, Copy)]
pub struct DebtConstants {
    pub e_bar: f64,
    pub r_bar: f64,
    pub k: f64,
}

pub fn debt_constants(env: &Environment) -> DebtConstants {
    let cp1 = env.c_p(1.0);
    let (e_bar, k) = num::golden_min(
        |e| e * env.c_a_d1(e) + (1.0 - e) * cp1,
        0.0,
        1.0,
        tol::GOLDEN_WIDTH,
    );
    DebtConstants {
        e_bar,
        r_bar: env.c_a_d1(e_bar),
        k,
    }
}

/// Debt with relief and face value `y0`: audit every default (`y < y0`) for
/// sure, ask the calibrated effort with its relief refund there, refund
/// everything above the face value. Induces `λ(x) = min{x, y0}`.
pub fn debt_with_relief(env: &Environment, y0: f64, grid: &[f64]) -> Result<Mechanism, SolveError> {
    if !(env.x_lo..=env.x_hi).contains(&y0) {
        return Err(SolveError::Domain {
            what: "y0",
            value: y0,
            lo: env.x_lo,
            hi: env.x_hi,
        });
    }
    let c = debt_constants(env);
    let n = grid.len();
    let mut e_a = vec![0.0; n];
    let mut e_p = vec![0.0; n];
    let mut r_a = vec![0.0; n];
    let r_p = vec![0.0; n];
    let mut r_e = vec![0.0; n];
    for i in 0..n {
        let y = grid[i];
        if y < y0 {
            e_a[i] = c.e_bar;
            e_p[i] = 1.0;
            r_a[i] = c.r_bar;
        } else {
            // Nudge the refund so repayment lands on the face value exactly:
            // the defining identity is y − r_empty = y0, and the straight
            // difference can sit one ulp off it.
            let mut r = y - y0;
            while y - r > y0 {
                r = f64::from_bits(r.to_bits() + 1);
            }
            while y - r < y0 {
                r = f64::from_bits(r.to_bits() - 1);
            }
            r_e[i] = r;
        }
    }
    Mechanism::new(env, grid.to_vec(), e_a, e_p, r_a, r_p, r_e, Provenance::Constructed)
        .map_err(|e| SolveError::InvariantViolation(format!("debt construction infeasible: {e}")))
}
