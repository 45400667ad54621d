//! Audit-loss functions and the envelope quantities built from them.
//!
//! A loss function `λ` assigns to every type `x` the payment the principal
//! can extract from that type without evidence ever being produced on the
//! equilibrium path. The solver works with two classes:
//!
//! * `Λ` — anchored at `λ(x̲) = x̲`, nondecreasing, concave, and below the
//!   identity. Every tight mechanism induces a loss in this class, and every
//!   member of the class is induced by some tight mechanism.
//! * `Λ₀` — the raw pre-tightening class: below the identity and bounded in
//!   `[-τ, x̄]`. Induced losses of arbitrary feasible mechanisms and the
//!   running-maximum regularization live here.
//!
//! All functions are piecewise linear on their knot grid, so suprema over
//! types reduce to maxima over knots (plus one explicit one-sided-slope term
//! in [`LossFunction::alpha`], see below). That keeps every envelope
//! computation exact for the representation we actually store.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::model::Environment;
use crate::num;
use crate::tol;

/// Which certification the values passed at construction time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossClass {
    /// Anchored, nondecreasing, concave, below the identity.
    Lambda,
    /// Below the identity and within `[-τ, x̄]`; no shape guarantees.
    Lambda0,
}

#[derive(Debug, Error)]
pub enum LossError {
    #[error("{what} = {value} outside [{lo}, {hi}]")]
    Domain {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    /// Class certification failed beyond tolerance. The payload names the
    /// first violated property and the knot where it happened.
    #[error("loss-class certification failed: {0}")]
    InvariantViolation(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("loss CSV: {0}")]
    Parse(String),
}

/// A piecewise-linear loss function on a strictly increasing knot grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LossFunction {
    grid: Vec<f64>,
    values: Vec<f64>,
    class: LossClass,
}

fn check_grid(grid: &[f64]) -> Result<(), LossError> {
    if grid.len() < 2 {
        return Err(LossError::InvariantViolation(
            "grid needs at least two knots".into(),
        ));
    }
    for (i, w) in grid.windows(2).enumerate() {
        if !w[0].is_finite() || !w[1].is_finite() || w[1] <= w[0] {
            return Err(LossError::InvariantViolation(format!(
                "grid not strictly increasing at knot {i}: {} then {}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

impl LossFunction {
    /// Certify `values` as a member of `Λ` on `grid`.
    ///
    /// Anchor and the below-identity bound are checked at 1e-9; monotonicity
    /// at 1e-12 (pure roundoff slack); concavity through values, by requiring
    /// every interior knot to sit on or above the chord of its neighbors.
    pub fn lambda(grid: Vec<f64>, values: Vec<f64>) -> Result<Self, LossError> {
        check_grid(&grid)?;
        if values.len() != grid.len() {
            return Err(LossError::GridMismatch(format!(
                "{} knots but {} values",
                grid.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(LossError::InvariantViolation("non-finite value".into()));
        }
        let x_lo = grid[0];
        if (values[0] - x_lo).abs() > tol::LOSS_CLASS {
            return Err(LossError::InvariantViolation(format!(
                "anchor: lambda(x_lo) = {} but x_lo = {x_lo}",
                values[0]
            )));
        }
        for i in 0..grid.len() {
            if values[i] > grid[i] + tol::LOSS_CLASS {
                return Err(LossError::InvariantViolation(format!(
                    "above identity at knot {i}: lambda({}) = {}",
                    grid[i], values[i]
                )));
            }
            if i + 1 < grid.len() && values[i + 1] < values[i] - 1e-12 {
                return Err(LossError::InvariantViolation(format!(
                    "decreasing at knot {i}: {} then {}",
                    values[i],
                    values[i + 1]
                )));
            }
        }
        for i in 1..grid.len() - 1 {
            let t = (grid[i] - grid[i - 1]) / (grid[i + 1] - grid[i - 1]);
            let chord = values[i - 1] + t * (values[i + 1] - values[i - 1]);
            if values[i] < chord - tol::LOSS_CLASS {
                return Err(LossError::InvariantViolation(format!(
                    "convex kink at knot {i} (x = {}): value {} below chord {chord}",
                    grid[i], values[i]
                )));
            }
        }
        Ok(Self {
            grid,
            values,
            class: LossClass::Lambda,
        })
    }

    /// Certify `values` as a member of `Λ₀` on `grid` with budget `tau`.
    pub fn lambda0(grid: Vec<f64>, values: Vec<f64>, tau: f64) -> Result<Self, LossError> {
        check_grid(&grid)?;
        if values.len() != grid.len() {
            return Err(LossError::GridMismatch(format!(
                "{} knots but {} values",
                grid.len(),
                values.len()
            )));
        }
        let x_hi = *grid.last().unwrap();
        for i in 0..grid.len() {
            let v = values[i];
            if !v.is_finite() {
                return Err(LossError::InvariantViolation("non-finite value".into()));
            }
            if v > grid[i] + tol::LOSS_CLASS {
                return Err(LossError::InvariantViolation(format!(
                    "above identity at knot {i}: lambda({}) = {v}",
                    grid[i]
                )));
            }
            if v < -tau - tol::LOSS_CLASS || v > x_hi + tol::LOSS_CLASS {
                return Err(LossError::InvariantViolation(format!(
                    "out of range at knot {i}: {v} not in [-tau, x_hi]"
                )));
            }
        }
        Ok(Self {
            grid,
            values,
            class: LossClass::Lambda0,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn class(&self) -> LossClass {
        self.class
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn x_lo(&self) -> f64 {
        self.grid[0]
    }

    pub fn x_hi(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    /// Chord slope of segment `i` (between knots `i` and `i+1`).
    pub fn slope(&self, i: usize) -> f64 {
        (self.values[i + 1] - self.values[i]) / (self.grid[i + 1] - self.grid[i])
    }

    /// True when chord slopes are strictly decreasing with margin `> eps`.
    pub fn is_strictly_concave(&self, eps: f64) -> bool {
        (0..self.len() - 2).all(|i| self.slope(i) - self.slope(i + 1) > eps)
    }

    /// Evaluate at `x`, which must lie in the grid span (1e-9 slack for
    /// endpoint roundoff).
    pub fn eval(&self, x: f64) -> Result<f64, LossError> {
        if !(self.x_lo() - 1e-9..=self.x_hi() + 1e-9).contains(&x) {
            return Err(LossError::Domain {
                what: "x",
                value: x,
                lo: self.x_lo(),
                hi: self.x_hi(),
            });
        }
        Ok(self.value_at(x))
    }

    pub(crate) fn value_at(&self, x: f64) -> f64 {
        num::interp(&self.grid, &self.values, x)
    }

    /// Lowest audit probability that deters every upward misreport from `y`:
    /// `α(y) = max{0, sup_{x ∈ (y, x̄]} (λ(x) − y)/(x − y)}`, clamped to
    /// `[0, 1]`, with `α(x̄) = 0`.
    ///
    /// For piecewise-linear `λ` the sup is attained at a knot, except that at
    /// points with `λ(y) = y` it may only be approached as `x ↓ y`; we add
    /// that one-sided slope limit explicitly.
    pub fn alpha(&self, y: f64) -> Result<f64, LossError> {
        if !(self.x_lo() - 1e-9..=self.x_hi() + 1e-9).contains(&y) {
            return Err(LossError::Domain {
                what: "y",
                value: y,
                lo: self.x_lo(),
                hi: self.x_hi(),
            });
        }
        if y >= self.x_hi() {
            return Ok(0.0);
        }
        let mut best = 0.0f64;
        let start = self.grid.partition_point(|&x| x <= y);
        for i in start..self.len() {
            best = best.max((self.values[i] - y) / (self.grid[i] - y));
        }
        if (self.value_at(y) - y).abs() <= 1e-12 {
            // On the λ = id stretch the difference quotient tends to the
            // right slope at y; the knot max alone would undershoot it.
            let seg = self
                .grid
                .partition_point(|&x| x <= y)
                .min(self.len() - 1)
                .max(1)
                - 1;
            best = best.max(self.slope(seg));
        }
        Ok(best.clamp(0.0, 1.0))
    }

    /// Lowest audit probability that deters downward deviations packaged
    /// with an off-path effort recommendation:
    /// `β(y, ẽ) = max{0, max_x (λ(x) − λ(y) − u_A(ẽ))/(x + τ)}`.
    ///
    /// Always `< 1` because `λ ≤ id`, `λ ≥ 0`, and `τ > 0`.
    pub fn beta(&self, env: &Environment, y: f64, e_tilde: f64) -> Result<f64, LossError> {
        if !(self.x_lo() - 1e-9..=self.x_hi() + 1e-9).contains(&y) {
            return Err(LossError::Domain {
                what: "y",
                value: y,
                lo: self.x_lo(),
                hi: self.x_hi(),
            });
        }
        if !(0.0..=1.0).contains(&e_tilde) {
            return Err(LossError::Domain {
                what: "e_tilde",
                value: e_tilde,
                lo: 0.0,
                hi: 1.0,
            });
        }
        let floor = self.value_at(y) + env.rent(e_tilde);
        let mut best = 0.0f64;
        for i in 0..self.len() {
            best = best.max((self.values[i] - floor) / (self.grid[i] + env.tau));
        }
        debug_assert!(best < 1.0, "beta must stay below 1");
        Ok(best)
    }

    /// Largest maximizer of `(λ(x) − s)/(x + τ)` over the knot grid. Breaking
    /// ties toward larger `x` makes the selection nondecreasing in `s`.
    pub fn zhat(&self, env: &Environment, s: f64) -> f64 {
        let mut best_i = 0usize;
        let mut best = f64::NEG_INFINITY;
        for i in 0..self.len() {
            let r = (self.values[i] - s) / (self.grid[i] + env.tau);
            if r >= best {
                best = r;
                best_i = i;
            }
        }
        self.grid[best_i]
    }

    /// Running maximum floored at `x̲`: the first tightening step. Idempotent,
    /// and maps any `Λ₀` member into a nondecreasing `Λ₀` member.
    pub fn regularize_plus(&self) -> LossFunction {
        let x_lo = self.x_lo();
        let mut running = x_lo;
        let values = self
            .values
            .iter()
            .map(|&v| {
                running = running.max(v);
                running
            })
            .collect();
        LossFunction {
            grid: self.grid.clone(),
            values,
            class: LossClass::Lambda0,
        }
    }

    /// Two-column CSV (`y,lambda`), 17 significant digits so values
    /// round-trip exactly.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "y,lambda")?;
        for (x, v) in self.grid.iter().zip(&self.values) {
            writeln!(w, "{},{}", num::fmt_g17(*x), num::fmt_g17(*v))?;
        }
        Ok(())
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> std::io::Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        std::fs::write(path, buf)
    }

    /// Parse a two-column CSV and certify it: `Λ` when it passes, `Λ₀`
    /// otherwise (with `tau` bounding the refund range from below).
    pub fn read_csv<R: Read>(r: R, tau: f64) -> Result<Self, LossError> {
        let reader = BufReader::new(r);
        let mut grid = Vec::new();
        let mut values = Vec::new();
        for (ln, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| LossError::Parse(e.to_string()))?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if ln == 0 {
                let mut cols = line.split(',').map(str::trim);
                if cols.next() != Some("y") || cols.next() != Some("lambda") {
                    return Err(LossError::Parse(format!("unexpected header `{line}`")));
                }
                continue;
            }
            let mut cols = line.split(',').map(str::trim);
            let (xs, vs) = match (cols.next(), cols.next()) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(LossError::Parse(format!("line {}: need 2 columns", ln + 1))),
            };
            let x: f64 = xs
                .parse()
                .map_err(|e| LossError::Parse(format!("line {}: {e}", ln + 1)))?;
            let v: f64 = vs
                .parse()
                .map_err(|e| LossError::Parse(format!("line {}: {e}", ln + 1)))?;
            grid.push(x);
            values.push(v);
        }
        match Self::lambda(grid.clone(), values.clone()) {
            Ok(l) => Ok(l),
            Err(_) => Self::lambda0(grid, values, tau),
        }
    }

    pub fn load<P: AsRef<Path>>(path: P, tau: f64) -> Result<Self, LossError> {
        let f = std::fs::File::open(path).map_err(|e| LossError::Parse(e.to_string()))?;
        Self::read_csv(f, tau)
    }
}

/// The calibrated example's loss shape, `λ(x) = 1 − exp(−x)`, sampled on
/// `grid`. Only in class `Λ` when the grid starts where `1 − exp(−x)` meets
/// the identity, i.e. at `x̲ = 0`.
pub fn one_minus_exp(grid: &[f64]) -> Result<LossFunction, LossError> {
    let values = grid.iter().map(|&x| 1.0 - (-x).exp()).collect();
    LossFunction::lambda(grid.to_vec(), values)
}

/// Mollified strict concavification:
/// `λ_n′(x) = −x/n + n ∫_{[x, x+1/n]} λ′(t) dt`, integrated from `x̲`.
///
/// `λ′` is the knot-slope step function, treated as zero past `x̄`. Slopes
/// are floored at the strictly decreasing ramp `1e-5 · (x̄ − x)` so the
/// output stays nondecreasing (and hence in `Λ`) even where the raw formula
/// dips below zero — it always does on the last window under the
/// constant-extension convention; the ramp preserves strict concavity
/// because the unfloored derivative decreases at rate ≥ 1/n. Returns the
/// smoothed function together with the constant `C` in the error bound
/// `sup|λ_n − λ| ≤ C/n`.
pub fn smooth_loss(lam: &LossFunction, n: u32) -> Result<(LossFunction, f64), LossError> {
    if lam.class() != LossClass::Lambda {
        return Err(LossError::InvariantViolation(
            "smoothing requires a Lambda-class input".into(),
        ));
    }
    if n == 0 {
        return Err(LossError::Domain {
            what: "n",
            value: 0.0,
            lo: 1.0,
            hi: f64::INFINITY,
        });
    }
    let nf = f64::from(n);
    let (x_lo, x_hi) = (lam.x_lo(), lam.x_hi());
    let span = x_hi - x_lo;
    let m = lam.len() - 1;
    // Snapped slopes: running minimum capped at 1 absorbs certification
    // slack so the step function is genuinely nonincreasing in [0, 1].
    let mut slopes = Vec::with_capacity(m);
    let mut run = 1.0f64;
    for i in 0..m {
        run = run.min(lam.slope(i)).max(0.0);
        slopes.push(run);
    }
    // Prefix integral of the slope step function. Past x̄ the loss is treated
    // as constant (slope zero): that is the shape a tight mechanism's loss
    // has at the top, it keeps the window average nonincreasing, and it runs
    // the smoothed slope down to ~0 at x̄ instead of freezing the last
    // interior slope there — which would leave every shallow audit line
    // touching only at x̄ and wreck the tangency structure downstream.
    let mut prefix = Vec::with_capacity(m + 1);
    let mut acc = 0.0;
    prefix.push(0.0);
    for i in 0..m {
        acc += slopes[i] * (lam.grid[i + 1] - lam.grid[i]);
        prefix.push(acc);
    }
    let int_slope = |t: f64| -> f64 {
        if t >= x_hi {
            return prefix[m];
        }
        let i = lam.grid.partition_point(|&g| g <= t).max(1) - 1;
        prefix[i] + slopes[i] * (t - lam.grid[i])
    };
    let deriv = |x: f64| -> f64 {
        let raw = -x / nf + nf * (int_slope(x + 1.0 / nf) - int_slope(x));
        // Strictly positive floor, itself strictly decreasing, so the output
        // is strictly increasing and strictly concave through the flat tail.
        // The 1e-5 ramp rate keeps consecutive cell slopes separated by far
        // more than the f64 rounding of the accumulated values.
        raw.max(1e-5 * (x_hi - x))
    };
    // Breakpoints of λ_n′: knots, knots shifted left by the window, and a
    // uniform refinement so the kink rounding is actually resolved. The
    // refinement is floored at ~1e-3·span cells because downstream tangency
    // scans quantize to these knots. The last window [x̄ − 1/n, x̄], where
    // the averaged slope dives to the floor, gets its own dense cluster.
    let mut pts: Vec<f64> = Vec::new();
    pts.extend_from_slice(&lam.grid);
    pts.extend(lam.grid.iter().map(|&g| g - 1.0 / nf));
    let fine = ((2.0 * nf * span).ceil() as usize).max(1200);
    pts.extend(num::linspace(x_lo, x_hi, fine + 2));
    pts.extend(num::linspace(
        x_hi - (1.0 / nf).min(span),
        x_hi,
        81,
    ));
    pts.retain(|&p| p >= x_lo && p <= x_hi);
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
    *pts.last_mut().unwrap() = x_hi;
    pts[0] = x_lo;
    // Near-coincident breakpoints from the overlaid families would make
    // cells so thin that slopes recovered from the accumulated values drown
    // in rounding noise; thin to a minimum width. Strict concavity survives
    // any thinning because the trapezoid means compare endpoint derivatives.
    let w_min = 5e-5 * span;
    let mut thinned = Vec::with_capacity(pts.len());
    thinned.push(x_lo);
    for &p in &pts[1..] {
        if p - thinned.last().unwrap() >= w_min {
            thinned.push(p);
        }
    }
    if *thinned.last().unwrap() < x_hi {
        if x_hi - thinned.last().unwrap() < w_min && thinned.len() > 1 {
            thinned.pop();
        }
        thinned.push(x_hi);
    }
    let pts = thinned;
    // λ_n′ is piecewise linear between these points, so the trapezoid rule
    // integrates it exactly (up to the 1e-9-scale floor kinks).
    let mut values = Vec::with_capacity(pts.len());
    let mut v = x_lo;
    let mut d_prev = deriv(pts[0]);
    values.push(v);
    for k in 1..pts.len() {
        let d_here = deriv(pts[k]);
        v += 0.5 * (d_prev + d_here) * (pts[k] - pts[k - 1]);
        d_prev = d_here;
        values.push(v);
    }
    let out = LossFunction::lambda(pts, values)?;
    if !out.is_strictly_concave(0.0) {
        return Err(LossError::InvariantViolation(
            "smoothed output not strictly concave".into(),
        ));
    }
    let sup_slope = slopes[0];
    let c = sup_slope + 0.5 * (x_hi * x_hi - x_lo * x_lo);
    Ok((out, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Environment;
    use proptest::prelude::*;

    fn fig1() -> Environment {
        Environment::figure1()
    }

    fn exp_loss(n: usize) -> LossFunction {
        one_minus_exp(&num::linspace(0.0, 1.0, n)).unwrap()
    }

    #[test]
    fn alpha_zero_at_top() {
        let lam = exp_loss(101);
        assert_eq!(lam.alpha(1.0).unwrap(), 0.0);
    }

    #[test]
    fn alpha_matches_grid_oracle() {
        // Independent oracle: direct maximization of the difference quotient
        // over a dense grid.
        let lam = exp_loss(10_001);
        let y = 0.1;
        let mut oracle = 0.0f64;
        let mut arg = y;
        for i in 0..lam.len() {
            let x = lam.grid()[i];
            if x > y {
                let r = (lam.values()[i] - y) / (x - y);
                if r > oracle {
                    oracle = r;
                    arg = x;
                }
            }
        }
        let a = lam.alpha(y).unwrap();
        assert!((a - oracle).abs() < 1e-12);
        assert!((a - 0.813).abs() < 2e-3, "alpha = {a}");
        assert!((arg - 0.21).abs() < 0.02, "argmax at {arg}");
    }

    #[test]
    fn alpha_is_one_on_identity_stretch() {
        let grid = num::linspace(0.0, 1.0, 11);
        let values: Vec<f64> = grid.iter().map(|&x| x.min(0.5)).collect();
        let lam = LossFunction::lambda(grid, values).unwrap();
        assert_eq!(lam.alpha(0.3).unwrap(), 1.0);
        // Above the kink nothing is left to deter.
        assert_eq!(lam.alpha(0.7).unwrap(), 0.0);
    }

    #[test]
    fn alpha_right_slope_term_off_knot() {
        // y strictly inside an identity segment: the sup is the segment
        // slope, approached but not attained at knots.
        let grid = vec![0.0, 0.5, 1.0];
        let values = vec![0.0, 0.5, 0.75];
        let lam = LossFunction::lambda(grid, values).unwrap();
        let a = lam.alpha(0.25).unwrap();
        assert_eq!(a, 1.0);
    }

    #[test]
    fn beta_frozen_value() {
        let env = fig1();
        let lam = exp_loss(401);
        let b = lam.beta(&env, 0.9, 0.0).unwrap();
        let exact = ((-0.9f64).exp() - (-1.0f64).exp()) / 2.0;
        assert!((b - exact).abs() < 1e-9, "beta = {b}, exact = {exact}");
        // Enough rent wipes out the numerator everywhere.
        assert_eq!(lam.beta(&env, 0.9, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn beta_zero_at_argmax_of_lambda() {
        let env = fig1();
        let lam = exp_loss(101);
        assert_eq!(lam.beta(&env, 1.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn beta_nonincreasing_in_effort() {
        let env = fig1();
        let lam = exp_loss(201);
        let mut prev = f64::INFINITY;
        for k in 0..=10 {
            let b = lam.beta(&env, 0.9, k as f64 / 10.0).unwrap();
            assert!(b <= prev + 1e-15);
            prev = b;
        }
    }

    #[test]
    fn zhat_tie_rules() {
        let env = fig1();
        let grid = num::linspace(0.0, 1.0, 11);
        let flat = LossFunction::lambda(grid, vec![0.0; 11]).unwrap();
        // Positive numerator: smallest denominator wins.
        assert_eq!(flat.zhat(&env, -0.5), 0.0);
        // Nonpositive numerator: ratio rises toward zero as x grows.
        assert_eq!(flat.zhat(&env, 0.1), 1.0);
        // Exactly flat objective: largest maximizer.
        assert_eq!(flat.zhat(&env, 0.0), 1.0);

        let lam = exp_loss(401);
        let s = lam.eval(0.9).unwrap();
        assert_eq!(lam.zhat(&env, s), 1.0);
        assert_eq!(lam.zhat(&env, 2.0), 1.0);
    }

    #[test]
    fn regularize_running_max() {
        let grid = vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        let raw = LossFunction::lambda0(grid, vec![0.0, 0.3, 0.2, 0.4], 1.0).unwrap();
        let reg = raw.regularize_plus();
        assert_eq!(reg.values(), &[0.0, 0.3, 0.3, 0.4]);
        assert_eq!(reg.regularize_plus().values(), reg.values());
    }

    #[test]
    fn regularize_floors_at_x_lo() {
        let grid = vec![0.2, 0.4, 0.6, 0.8];
        let raw = LossFunction::lambda0(grid, vec![0.1, 0.05, 0.3, 0.25], 1.0).unwrap();
        let reg = raw.regularize_plus();
        assert_eq!(reg.values(), &[0.2, 0.2, 0.3, 0.3]);
    }

    #[test]
    fn lambda_certifier_rejects() {
        let grid = num::linspace(0.0, 1.0, 5);
        // Convex kink.
        assert!(matches!(
            LossFunction::lambda(grid.clone(), vec![0.0, 0.1, 0.1, 0.3, 0.5]),
            Err(LossError::InvariantViolation(_))
        ));
        // Above identity.
        assert!(LossFunction::lambda(grid.clone(), vec![0.0, 0.3, 0.5, 0.6, 0.7]).is_err());
        // Anchor broken.
        assert!(LossFunction::lambda(grid.clone(), vec![0.1, 0.3, 0.45, 0.55, 0.6]).is_err());
        // Lambda0 range floor.
        assert!(LossFunction::lambda0(grid, vec![-0.8, 0.0, 0.0, 0.0, 0.0], 0.5).is_err());
    }

    #[test]
    fn smooth_kink_is_rounded() {
        let grid = num::linspace(0.0, 1.0, 21);
        let values: Vec<f64> = grid.iter().map(|&x| x.min(0.5)).collect();
        let lam = LossFunction::lambda(grid, values).unwrap();
        let (sm, c) = smooth_loss(&lam, 100).unwrap();
        assert_eq!(sm.class(), LossClass::Lambda);
        assert!(sm.is_strictly_concave(0.0));
        assert_eq!(sm.values()[0], 0.0);
        assert!(sm.eval(0.5).unwrap() < 0.5);
        let sup = worst_gap(&lam, &sm);
        assert!(sup <= c / 100.0 + 1e-8, "sup = {sup}, C = {c}");
        // Span-1 grid: the coarser slope-only bound holds too.
        assert!(sup <= 1.0 / 100.0 + 1e-8);
    }

    #[test]
    fn smooth_converges() {
        let lam = exp_loss(201);
        let mut prev = f64::INFINITY;
        for n in [50u32, 100, 200] {
            let (sm, c) = smooth_loss(&lam, n).unwrap();
            let sup = worst_gap(&lam, &sm);
            assert!(sup <= c / f64::from(n) + 1e-8);
            assert!(sup <= prev + 1e-12);
            prev = sup;
        }
    }

    fn worst_gap(a: &LossFunction, b: &LossFunction) -> f64 {
        let probe = num::linspace(a.x_lo(), a.x_hi(), 2001);
        probe
            .iter()
            .map(|&x| (a.value_at(x) - b.value_at(x)).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let lam = exp_loss(57);
        let mut buf = Vec::new();
        lam.write_csv(&mut buf).unwrap();
        let back = LossFunction::read_csv(&buf[..], 1.0).unwrap();
        assert_eq!(back.grid(), lam.grid());
        assert_eq!(back.values(), lam.values());
        assert_eq!(back.class(), LossClass::Lambda);

        // A non-concave file falls back to the raw class.
        let raw = LossFunction::lambda0(
            num::linspace(0.0, 1.0, 4).to_vec(),
            vec![0.0, 0.05, 0.02, 0.4],
            1.0,
        )
        .unwrap();
        let mut buf = Vec::new();
        raw.write_csv(&mut buf).unwrap();
        let back = LossFunction::read_csv(&buf[..], 1.0).unwrap();
        assert_eq!(back.class(), LossClass::Lambda0);
    }

    // Random member of Λ on [0, 1]: slopes sorted descending within [0, 1]
    // and integrated from the anchor.
    prop_compose! {
        fn arb_lambda()(raw in prop::collection::vec(0.0f64..1.0, 32)) -> LossFunction {
            let mut slopes = raw;
            slopes.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let grid = num::linspace(0.0, 1.0, 33);
            let mut values = vec![0.0];
            for (i, s) in slopes.iter().enumerate() {
                values.push(values[i] + s / 32.0);
            }
            LossFunction::lambda(grid, values).expect("construction is in class")
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn alpha_nonincreasing(lam in arb_lambda()) {
            let mut prev = f64::INFINITY;
            for k in 0..=32 {
                let a = lam.alpha(k as f64 / 32.0).unwrap();
                prop_assert!(a <= prev + 1e-12);
                prev = a;
            }
        }

        #[test]
        fn beta_below_one(lam in arb_lambda(), y in 0.0f64..=1.0, e in 0.0f64..=1.0) {
            let env = Environment::figure1();
            let b = lam.beta(&env, y, e).unwrap();
            prop_assert!((0.0..1.0).contains(&b));
        }

        #[test]
        fn zhat_nondecreasing(lam in arb_lambda()) {
            let env = Environment::figure1();
            let mut prev = f64::NEG_INFINITY;
            for k in 0..100 {
                let s = -0.5 + 2.0 * k as f64 / 99.0;
                let z = lam.zhat(&env, s);
                prop_assert!(z >= prev - 1e-15);
                prev = z;
            }
        }

        #[test]
        fn regularize_idempotent_and_monotone(lam in arb_lambda()) {
            let reg = lam.regularize_plus();
            for w in reg.values().windows(2) {
                prop_assert!(w[1] >= w[0]);
            }
            let twice = reg.regularize_plus();
            prop_assert_eq!(twice.values(), reg.values());
        }

        #[test]
        fn smoothing_stays_close(lam in arb_lambda()) {
            let (sm, c) = smooth_loss(&lam, 50).unwrap();
            prop_assert!(sm.is_strictly_concave(0.0));
            let sup = worst_gap(&lam, &sm);
            prop_assert!(sup <= c / 50.0 + 1e-8);
        }
    }
}
