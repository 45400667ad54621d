//! The mechanism data type and everything an agent's play pins down:
//! interim utility, profit, induced loss, and the incentive checkers.
//!
//! A mechanism posts, per reported type `y`, an effort pair and three refunds
//! off the posted tax `y + τ`: `r_A` when the agent's evidence is accepted,
//! `r_P` when an audit confirms the report, `r_empty` when nobody verifies.
//! Refunds that are never paid carry no content, so the constructor
//! normalizes them to zero (`r_P` under `e_P = 0`, `r_empty` under
//! `e_P = 1`) and all derived quantities are invariant to that choice.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::loss::LossFunction;
use crate::model::Environment;
use crate::num;
use crate::tol;

/// Where a mechanism came from; purely informational.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Loaded or assembled directly from schedules.
    Raw,
    /// Output of the tightening algorithm.
    Tightened,
    /// Built by a closed-form constructor (full audit, debt-with-relief).
    Constructed,
}

#[derive(Debug, Error)]
pub enum MechanismError {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("infeasible at knot {knot}: {what}")]
    Infeasible { knot: usize, what: String },
    #[error("mechanism CSV: {0}")]
    Parse(String),
}

/// Incentive audit of a mechanism. `worst_slack` is the minimum of
/// `U(x) − (x − λ_m(x))` over knots (negative means a profitable deviation
/// exists); `worst_foc_residual` is the largest obedience violation,
/// including the no-certain-evidence cap `r_A − R_NA ≤ c_A′(1)`.
#[derive(Debug, Clone)]
pub struct IncentiveReport {
    pub ic_ok: bool,
    pub obedience_ok: bool,
    pub worst_slack: f64,
    pub worst_foc_residual: f64,
    pub violating_knots: Vec<usize>,
}

/// Per-knot derived quantities, computed in one pass.
#[derive(Debug, Clone)]
pub struct DerivedSchedules {
    pub r_na: Vec<f64>,
    pub u: Vec<f64>,
    pub pi: Vec<f64>,
    pub lambda_m: LossFunction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mechanism {
    grid: Vec<f64>,
    e_a: Vec<f64>,
    e_p: Vec<f64>,
    r_a: Vec<f64>,
    r_p: Vec<f64>,
    r_empty: Vec<f64>,
    provenance: Provenance,
}

fn snap_unit(v: f64, knot: usize, what: &str) -> Result<f64, MechanismError> {
    if !v.is_finite() || !(-1e-12..=1.0 + 1e-12).contains(&v) {
        return Err(MechanismError::Infeasible {
            knot,
            what: format!("{what} = {v} outside [0, 1]"),
        });
    }
    Ok(v.clamp(0.0, 1.0))
}

fn snap_refund(v: f64, cap: f64, knot: usize, what: &str) -> Result<f64, MechanismError> {
    if !v.is_finite() || v < -tol::REFUND_FEAS || v > cap + tol::REFUND_FEAS {
        return Err(MechanismError::Infeasible {
            knot,
            what: format!("{what} = {v} outside [0, {cap}]"),
        });
    }
    Ok(v.clamp(0.0, cap))
}

impl Mechanism {
    /// Validate, snap roundoff-level boundary violations, and normalize
    /// never-paid refunds to zero.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        env: &Environment,
        grid: Vec<f64>,
        e_a: Vec<f64>,
        e_p: Vec<f64>,
        r_a: Vec<f64>,
        r_p: Vec<f64>,
        r_empty: Vec<f64>,
        provenance: Provenance,
    ) -> Result<Self, MechanismError> {
        let n = grid.len();
        if n < 2 {
            return Err(MechanismError::GridMismatch(
                "grid needs at least two knots".into(),
            ));
        }
        for w in grid.windows(2) {
            if !w[0].is_finite() || !w[1].is_finite() || w[1] <= w[0] {
                return Err(MechanismError::GridMismatch(
                    "grid not strictly increasing".into(),
                ));
            }
        }
        if (grid[0] - env.x_lo).abs() > 1e-9 || (grid[n - 1] - env.x_hi).abs() > 1e-9 {
            return Err(MechanismError::GridMismatch(format!(
                "grid spans [{}, {}] but environment spans [{}, {}]",
                grid[0],
                grid[n - 1],
                env.x_lo,
                env.x_hi
            )));
        }
        for (name, s) in [
            ("e_A", &e_a),
            ("e_P", &e_p),
            ("r_A", &r_a),
            ("r_P", &r_p),
            ("r_empty", &r_empty),
        ] {
            if s.len() != n {
                return Err(MechanismError::GridMismatch(format!(
                    "{name} has {} entries for {n} knots",
                    s.len()
                )));
            }
        }
        let mut m = Self {
            grid,
            e_a,
            e_p,
            r_a,
            r_p,
            r_empty,
            provenance,
        };
        for i in 0..n {
            let cap = m.grid[i] + env.tau;
            m.e_a[i] = snap_unit(m.e_a[i], i, "e_A")?;
            m.e_p[i] = snap_unit(m.e_p[i], i, "e_P")?;
            m.r_a[i] = snap_refund(m.r_a[i], cap, i, "r_A")?;
            m.r_p[i] = snap_refund(m.r_p[i], cap, i, "r_P")?;
            m.r_empty[i] = snap_refund(m.r_empty[i], cap, i, "r_empty")?;
            if m.e_p[i] == 0.0 {
                m.r_p[i] = 0.0;
            }
            if m.e_p[i] == 1.0 {
                m.r_empty[i] = 0.0;
            }
        }
        Ok(m)
    }

    /// Always-audit benchmark: `e_P ≡ 1`, no effort asked of the agent, no
    /// refunds. Induces `λ_m = id`, so it is incentive compatible for free.
    pub fn full_audit(env: &Environment, grid: Vec<f64>) -> Result<Self, MechanismError> {
        let n = grid.len();
        Self::new(
            env,
            grid,
            vec![0.0; n],
            vec![1.0; n],
            vec![0.0; n],
            vec![0.0; n],
            vec![0.0; n],
            Provenance::Constructed,
        )
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn e_a(&self) -> &[f64] {
        &self.e_a
    }

    pub fn e_p(&self) -> &[f64] {
        &self.e_p
    }

    pub fn r_a(&self) -> &[f64] {
        &self.r_a
    }

    pub fn r_p(&self) -> &[f64] {
        &self.r_p
    }

    pub fn r_empty(&self) -> &[f64] {
        &self.r_empty
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub(crate) fn with_provenance(mut self, p: Provenance) -> Self {
        self.provenance = p;
        self
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Expected refund when the agent produces no evidence.
    pub fn r_na(&self, i: usize) -> f64 {
        self.e_p[i] * self.r_p[i] + (1.0 - self.e_p[i]) * self.r_empty[i]
    }

    /// `U(y) = R_NA(y) + u_A(e_A(y))`: obedient play nets the agent the
    /// no-evidence refund plus the evidence rent.
    pub fn interim_utility(&self, env: &Environment) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.r_na(i) + env.rent(self.e_a[i]))
            .collect()
    }

    /// `Π(y) = y − R_NA − u_A(e_A) − c_A(e_A) − (1−e_A)·c_P(e_P)` per knot.
    pub fn profit(&self, env: &Environment) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                self.grid[i]
                    - self.r_na(i)
                    - env.rent(self.e_a[i])
                    - env.c_a(self.e_a[i])
                    - (1.0 - self.e_a[i]) * env.c_p(self.e_p[i])
            })
            .collect()
    }

    /// `λ_m(x) = min_{y ≤ x} e_P(y)·x + (1−e_P(y))·(y − r_empty(y))`, the
    /// cheapest concealment of surplus `x`. Deviations are restricted to
    /// grid knots (including `y = x` itself).
    pub fn induced_loss(&self, env: &Environment) -> LossFunction {
        let n = self.len();
        let mut values = Vec::with_capacity(n);
        for i in 0..n {
            let x = self.grid[i];
            let mut best = f64::INFINITY;
            for j in 0..=i {
                let v = self.e_p[j] * x + (1.0 - self.e_p[j]) * (self.grid[j] - self.r_empty[j]);
                if v < best {
                    best = v;
                }
            }
            values.push(best);
        }
        LossFunction::lambda0(self.grid.clone(), values, env.tau)
            .expect("induced loss is within the raw class by construction")
    }

    pub fn derived(&self, env: &Environment) -> DerivedSchedules {
        DerivedSchedules {
            r_na: (0..self.len()).map(|i| self.r_na(i)).collect(),
            u: self.interim_utility(env),
            pi: self.profit(env),
            lambda_m: self.induced_loss(env),
        }
    }

    pub fn check_incentives(&self, env: &Environment) -> IncentiveReport {
        self.check_incentives_with(env, tol::MONEY_EQ, tol::FOC)
    }

    /// IC: `U(x) ≥ x − λ_m(x)` within `tol_money` at every knot. Obedience:
    /// the agent's evidence-effort problem is maximized at `e_A(y)` — the
    /// interior first-order condition `c_A′(e_A) = r_A − R_NA` within
    /// `tol_foc`, one-sided at the corners — together with the cap
    /// `r_A − R_NA ≤ c_A′(1)` that rules out strict incentives for certain
    /// evidence.
    pub fn check_incentives_with(
        &self,
        env: &Environment,
        tol_money: f64,
        tol_foc: f64,
    ) -> IncentiveReport {
        let u = self.interim_utility(env);
        let lam = self.induced_loss(env);
        let cap = env.c_a_d1(1.0);
        let mut worst_slack = f64::INFINITY;
        let mut worst_foc = 0.0f64;
        let mut violating = Vec::new();
        for i in 0..self.len() {
            let mut bad = false;
            let slack = u[i] - (self.grid[i] - lam.values()[i]);
            if slack < worst_slack {
                worst_slack = slack;
            }
            if slack < -tol_money {
                bad = true;
            }
            let gap = self.r_a[i] - self.r_na(i);
            let e = self.e_a[i];
            let residual = if e == 0.0 {
                (gap - env.c_a_d1(0.0)).max(0.0)
            } else if e == 1.0 {
                (env.c_a_d1(1.0) - gap).max(0.0)
            } else {
                (env.c_a_d1(e) - gap).abs()
            };
            let residual = residual.max(gap - cap);
            if residual > worst_foc {
                worst_foc = residual;
            }
            if residual > tol_foc {
                bad = true;
            }
            if bad {
                violating.push(i);
            }
        }
        IncentiveReport {
            ic_ok: worst_slack >= -tol_money,
            obedience_ok: worst_foc <= tol_foc,
            worst_slack,
            worst_foc_residual: worst_foc,
            violating_knots: violating,
        }
    }

    /// Six-column CSV: `y,e_A,e_P,r_A,r_P,r_empty`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "y,e_A,e_P,r_A,r_P,r_empty")?;
        for i in 0..self.len() {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                num::fmt_g17(self.grid[i]),
                num::fmt_g17(self.e_a[i]),
                num::fmt_g17(self.e_p[i]),
                num::fmt_g17(self.r_a[i]),
                num::fmt_g17(self.r_p[i]),
                num::fmt_g17(self.r_empty[i]),
            )?;
        }
        Ok(())
    }

    /// The six schedule columns plus derived `U`, `Pi`, `lambda` per knot.
    pub fn write_derived_csv<W: Write>(&self, env: &Environment, mut w: W) -> std::io::Result<()> {
        let d = self.derived(env);
        writeln!(w, "y,e_A,e_P,r_A,r_P,r_empty,U,Pi,lambda")?;
        for i in 0..self.len() {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                num::fmt_g17(self.grid[i]),
                num::fmt_g17(self.e_a[i]),
                num::fmt_g17(self.e_p[i]),
                num::fmt_g17(self.r_a[i]),
                num::fmt_g17(self.r_p[i]),
                num::fmt_g17(self.r_empty[i]),
                num::fmt_g17(d.u[i]),
                num::fmt_g17(d.pi[i]),
                num::fmt_g17(d.lambda_m.values()[i]),
            )?;
        }
        Ok(())
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> std::io::Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        std::fs::write(path, buf)
    }

    pub fn read_csv<R: Read>(r: R, env: &Environment) -> Result<Self, MechanismError> {
        let reader = BufReader::new(r);
        let mut cols: [Vec<f64>; 6] = Default::default();
        for (ln, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| MechanismError::Parse(e.to_string()))?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if ln == 0 {
                let expect = ["y", "e_A", "e_P", "r_A", "r_P", "r_empty"];
                let got: Vec<&str> = line.split(',').map(str::trim).collect();
                if got != expect {
                    return Err(MechanismError::Parse(format!("unexpected header `{line}`")));
                }
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 6 {
                return Err(MechanismError::Parse(format!(
                    "line {}: need 6 columns, got {}",
                    ln + 1,
                    fields.len()
                )));
            }
            for (k, f) in fields.iter().enumerate() {
                cols[k].push(
                    f.parse()
                        .map_err(|e| MechanismError::Parse(format!("line {}: {e}", ln + 1)))?,
                );
            }
        }
        let [grid, e_a, e_p, r_a, r_p, r_empty] = cols;
        Self::new(env, grid, e_a, e_p, r_a, r_p, r_empty, Provenance::Raw)
    }

    pub fn load<P: AsRef<Path>>(path: P, env: &Environment) -> Result<Self, MechanismError> {
        let f = std::fs::File::open(path).map_err(|e| MechanismError::Parse(e.to_string()))?;
        Self::read_csv(f, env)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::LossClass;
    use proptest::prelude::*;

    fn fig1() -> Environment {
        Environment::figure1()
    }

    fn grid(n: usize) -> Vec<f64> {
        num::linspace(0.0, 1.0, n)
    }

    #[test]
    fn full_audit_derived() {
        let env = fig1();
        let m = Mechanism::full_audit(&env, grid(41)).unwrap();
        let d = m.derived(&env);
        assert!(d.u.iter().all(|&u| u == 0.0));
        let cp1 = env.c_p(1.0);
        for (i, &p) in d.pi.iter().enumerate() {
            assert!((p - (m.grid()[i] - cp1)).abs() < 1e-15);
        }
        // Every concealment is caught: the induced loss is the identity,
        // so IC holds with slack exactly zero.
        assert_eq!(d.lambda_m.values(), m.grid());
        let rep = m.check_incentives(&env);
        assert!(rep.ic_ok && rep.obedience_ok);
        assert_eq!(rep.worst_slack, 0.0);
        assert!(rep.violating_knots.is_empty());
    }

    #[test]
    fn no_audit_no_refund_loses_everything_but_the_floor() {
        let env = fig1();
        let n = 21;
        let m = Mechanism::new(
            &env,
            grid(n),
            vec![0.0; n],
            vec![0.0; n],
            vec![0.0; n],
            vec![0.0; n],
            vec![0.0; n],
            Provenance::Raw,
        )
        .unwrap();
        let lam = m.induced_loss(&env);
        assert!(lam.values().iter().all(|&v| v == 0.0));
        // Nothing deters the deviation to the bottom: IC fails above x_lo.
        let rep = m.check_incentives(&env);
        assert!(!rep.ic_ok);
        assert!((rep.worst_slack + 1.0).abs() < 1e-15);
    }

    #[test]
    fn accounting_identity() {
        let env = fig1();
        let n = 11;
        let g = grid(n);
        let e_a: Vec<f64> = g.iter().map(|&y| 0.3 + 0.4 * y).collect();
        let e_p: Vec<f64> = g.iter().map(|&y| 0.9 - 0.5 * y).collect();
        let r_a: Vec<f64> = g.iter().map(|&y| 0.2 * (y + 1.0)).collect();
        let r_p: Vec<f64> = g.iter().map(|&y| 0.1 * (y + 1.0)).collect();
        let r_e: Vec<f64> = g.iter().map(|&y| 0.05 * (y + 1.0)).collect();
        let m = Mechanism::new(&env, g, e_a, e_p, r_a, r_p, r_e, Provenance::Raw).unwrap();
        let d = m.derived(&env);
        for i in 0..n {
            let total = d.pi[i]
                + d.u[i]
                + env.c_a(m.e_a()[i])
                + (1.0 - m.e_a()[i]) * env.c_p(m.e_p()[i]);
            assert!(
                (total - m.grid()[i]).abs() <= 1e-12,
                "knot {i}: {total} vs {}",
                m.grid()[i]
            );
        }
    }

    #[test]
    fn never_paid_refunds_are_normalized() {
        let env = fig1();
        let g = vec![0.0, 0.5, 1.0];
        let m = Mechanism::new(
            &env,
            g,
            vec![0.0; 3],
            vec![0.0, 0.5, 1.0],
            vec![0.0; 3],
            vec![0.3, 0.3, 0.3],
            vec![0.2, 0.2, 0.2],
            Provenance::Raw,
        )
        .unwrap();
        assert_eq!(m.r_p(), &[0.0, 0.3, 0.3]);
        assert_eq!(m.r_empty(), &[0.2, 0.2, 0.0]);
    }

    #[test]
    fn constructor_rejects_real_violations_and_snaps_roundoff() {
        let env = fig1();
        let g = vec![0.0, 0.5, 1.0];
        let bad = Mechanism::new(
            &env,
            g.clone(),
            vec![0.0, 1.5, 0.0],
            vec![1.0; 3],
            vec![0.0; 3],
            vec![0.0; 3],
            vec![0.0; 3],
            Provenance::Raw,
        );
        assert!(matches!(
            bad,
            Err(MechanismError::Infeasible { knot: 1, .. })
        ));
        let over_cap = Mechanism::new(
            &env,
            g.clone(),
            vec![0.0; 3],
            vec![1.0; 3],
            vec![0.0; 3],
            vec![0.0, 0.0, 2.0 + 1e-3],
            vec![0.0; 3],
            Provenance::Raw,
        );
        assert!(over_cap.is_err());
        let snapped = Mechanism::new(
            &env,
            g,
            vec![0.0, 0.0, -1e-13],
            vec![1.0; 3],
            vec![0.0; 3],
            vec![0.0, 0.0, 2.0 + 1e-10],
            vec![0.0; 3],
            Provenance::Raw,
        )
        .unwrap();
        assert_eq!(snapped.e_a()[2], 0.0);
        assert_eq!(snapped.r_p()[2], 2.0);
    }

    #[test]
    fn broken_obedience_is_flagged() {
        let env = fig1();
        let n = 5;
        // Effort recommended but the evidence refund that should motivate it
        // is missing.
        let m = Mechanism::new(
            &env,
            grid(n),
            vec![0.5; n],
            vec![1.0; n],
            vec![0.0; n],
            vec![0.0; n],
            vec![0.0; n],
            Provenance::Raw,
        )
        .unwrap();
        let rep = m.check_incentives(&env);
        assert!(!rep.obedience_ok);
        assert!((rep.worst_foc_residual - env.c_a_d1(0.5)).abs() < 1e-15);
        assert_eq!(rep.violating_knots.len(), n);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let env = fig1();
        let n = 13;
        let g = grid(n);
        let e_a: Vec<f64> = g.iter().map(|&y| (0.1 + y / 3.0).min(1.0)).collect();
        let e_p: Vec<f64> = g.iter().map(|&y| 1.0 / (1.0 + y)).collect();
        let r_a: Vec<f64> = g.iter().map(|&y| 0.7 * y).collect();
        let r_p: Vec<f64> = g.iter().map(|&y| 0.3 * y + 0.01).collect();
        let r_e: Vec<f64> = g.iter().map(|&y| y * y / 2.0).collect();
        let m = Mechanism::new(&env, g, e_a, e_p, r_a, r_p, r_e, Provenance::Raw).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let back = Mechanism::read_csv(&buf[..], &env).unwrap();
        assert_eq!(back, m);
        let again = {
            let mut b = Vec::new();
            back.write_csv(&mut b).unwrap();
            b
        };
        assert_eq!(buf, again, "emission must be byte-stable");
    }

    prop_compose! {
        fn arb_mech()(
            e_a in prop::collection::vec(0.0f64..=1.0, 17),
            e_p in prop::collection::vec(0.0f64..=1.0, 17),
            fr_a in prop::collection::vec(0.0f64..=1.0, 17),
            fr_p in prop::collection::vec(0.0f64..=1.0, 17),
            fr_e in prop::collection::vec(0.0f64..=1.0, 17),
        ) -> Mechanism {
            let env = Environment::figure1();
            let g = num::linspace(0.0, 1.0, 17);
            let cap = |y: f64| y + env.tau;
            let r_a: Vec<f64> = g.iter().zip(&fr_a).map(|(&y, f)| f * cap(y)).collect();
            let r_p: Vec<f64> = g.iter().zip(&fr_p).map(|(&y, f)| f * cap(y)).collect();
            let r_e: Vec<f64> = g.iter().zip(&fr_e).map(|(&y, f)| f * cap(y)).collect();
            Mechanism::new(&env, g, e_a, e_p, r_a, r_p, r_e, Provenance::Raw).unwrap()
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn accounting_and_loss_shape(m in arb_mech()) {
            let env = Environment::figure1();
            let d = m.derived(&env);
            prop_assert_eq!(d.lambda_m.class(), LossClass::Lambda0);
            for i in 0..m.len() {
                let total = d.pi[i] + d.u[i] + env.c_a(m.e_a()[i])
                    + (1.0 - m.e_a()[i]) * env.c_p(m.e_p()[i]);
                prop_assert!((total - m.grid()[i]).abs() <= 1e-12);
                prop_assert!(d.lambda_m.values()[i] <= m.grid()[i] + 1e-12);
                if i > 0 {
                    // 1-Lipschitz from above: each envelope piece has slope
                    // e_P ≤ 1.
                    let step = m.grid()[i] - m.grid()[i - 1];
                    prop_assert!(
                        d.lambda_m.values()[i] - d.lambda_m.values()[i - 1] <= step + 1e-12
                    );
                }
            }
        }
    }
}
