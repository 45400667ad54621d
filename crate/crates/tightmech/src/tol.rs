//! Central numeric tolerances. Everything that compares money, efforts or
//! first-order conditions goes through these constants so the whole workspace
//! agrees on what "equal" means.

/// Money-valued equalities and incentive slacks (same unit as output).
pub const MONEY_EQ: f64 = 1e-9;

/// Obedience first-order condition residual `|c_A'(e_A) - (r_A - R_NA)|`.
pub const FOC: f64 = 1e-7;

/// Golden-section bracket width at which the scalar searches stop.
pub const GOLDEN_WIDTH: f64 = 1e-10;

/// Equality band for the regime discriminants d1/d2 when classifying knots.
pub const CLASSIFY_BAND: f64 = 1e-6;

/// Sup-norm distance under which a re-tightened mechanism counts as a fixed
/// point (compared on e_A, e_P and the profit schedule).
pub const FIXED_POINT: f64 = 1e-7;

/// Pointwise slack allowed when checking that tightening weakly improves.
pub const IMPROVEMENT: f64 = 1e-8;

/// Certification tolerance for loss-class membership (monotonicity, concavity,
/// anchoring and the identity bound are enforced up to this).
pub const LOSS_CLASS: f64 = 1e-9;

/// Refund feasibility slack: recovered refunds may undershoot 0 or overshoot
/// `y + tau` by at most this before the recovery errors out.
pub const REFUND_FEAS: f64 = 1e-9;

/// One-sided slack for the environment assumption checkers: a grid point
/// counts as violating only below `-ASSUMPTION_SLACK`. The calibrated example
/// satisfies the regularity assumption with exact equality at `e_A = 0`, so a
/// strict zero test would reject an environment the theory admits.
pub const ASSUMPTION_SLACK: f64 = 1e-10;

/// Trace/determinant tolerance for the curvature (Hessian) checks.
pub const HESSIAN: f64 = 1e-9;

/// Per-knot margin for "strictly monotone" schedule claims.
pub const STRICT_MONOTONE: f64 = 1e-9;

/// Profit agreement between the reduced solver and the brute-force oracle.
pub const ORACLE_PROFIT: f64 = 1e-4;

/// Contact-set equality band, scaled by `(1 + x_hi)` before use.
pub const CONTACT_BAND: f64 = 1e-8;

/// Root-finding residual for scalar inversions (efficient effort etc.).
pub const ROOT_RESIDUAL: f64 = 1e-9;

/// Gate on the pointwise impact residuals (|D+1| on super-low, |D| on
/// middle, |D−I| on super-high knots) of a tight mechanism.
pub const FOC_POINTWISE: f64 = 1e-4;

/// Gate on the integral first-order-condition residuals at a reported
/// optimum.
pub const FOC_INTEGRAL: f64 = 5e-3;

/// Tolerance on distribution normalization (trapezoid mass vs 1).
pub const DIST_MASS: f64 = 1e-8;
