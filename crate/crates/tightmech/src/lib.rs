//! Numerical toolkit for principal-optimal surplus division under two-sided
//! costly evidence.
//!
//! An agent privately observes output `x` in `[x_lo, x_hi]` and can exert
//! effort `e_A` to produce hard evidence of it; the principal can audit at
//! effort `e_P`. A mechanism posts, per reported type `y`, the effort pair and
//! three refunds off a posted tax: `r_A` (agent evidence accepted), `r_P`
//! (audit confirms), `r_empty` (nobody verifies). Everything here works on a
//! common discretization: schedules are piecewise linear between grid knots.
//!
//! The crate revolves around *loss functions* `lambda`: the concave increasing
//! envelope of what the principal can collect from each type once downward
//! misreporting is priced in. Given a loss the per-type reduced problem has a
//! three-piece profit envelope whose maximizer pins efforts, refunds then
//! follow in closed form, and the resulting mechanism is "tight" (no slack
//! left in any incentive constraint that matters). The [`tighten`] module maps
//! an arbitrary feasible mechanism to a tight one that weakly improves profit
//! and loss pointwise; [`optimality`] quantifies first-order optimality of a
//! loss against a type distribution and searches over losses; [`oracle`]
//! re-solves single types by brute force and audits solved mechanisms clause
//! by clause.

pub mod loss;
pub mod mechanism;
pub mod model;
pub mod num;
pub mod optimality;
pub mod oracle;
pub mod tighten;
pub mod tol;

pub use loss::{LossClass, LossError, LossFunction};
pub use mechanism::{DerivedSchedules, IncentiveReport, Mechanism, MechanismError, Provenance};
pub use model::{
    AssumptionReport, CostFunction, Environment, ModelError, TypeDistribution,
};
pub use optimality::{
    binding_ics, debt_benchmark, expected_profit, foc_residuals, impacts, optimize_loss,
    BindingIcReport, OptimError, OptimalityReport, Optimum,
};
pub use oracle::{
    brute_force_type, verify_characterization, CharacterizationReport, ClauseCheck,
    OracleConfig, OracleError, OracleSolution, RefundMode,
};
pub use tighten::{
    debt_constants, debt_with_relief, classify, solve_for_loss, solve_type, tighten,
    virtual_loss, IntervalPartition, ReducedSolution, Regime, RegionLabel, SolveError,
};
