//! Rothe (implicit Euler) time stepping for the regularized Bingham
//! Navier-Stokes problem with truncated skew-symmetric convection, together
//! with the per-step energy ledger and its audits.

use std::time::Instant;

use serde::Serialize;

use crate::data::{ScalarData, VectorData};
use crate::energy::{PhysicsParams, YieldField};
use crate::error::{BinghamError, Result, Stage};
use crate::grid::{
    center_average_transpose, center_average_unchecked, grad_tensor_into, grad_tensor_transpose,
    h1_norm_cell, h1_semi, h2_semi, l1_weighted, v_norm, FieldNorms, Grid, ScalarCellField,
    TensorCellField, VelocityField,
};
use crate::linalg::NeumannPoisson;
use crate::scalar::Real;
use crate::stationary::{
    NonlinearSystem, SolveReport, SolveStatus, SolverTolerances, StationarySolution, StepTerms,
};

/// Skew-symmetric convection `B(W, U)`: the Riesz representative of
/// `v -> (b_h(W, U, v) - b_h(W, v, U)) / 2` where
/// `b_h(w, u, v) = sum_c hx hy (grad u)_c wbar_c . vbar_c`. By construction
/// `(B(W, U), U)_h = 0` for every pair.
pub fn convection_b<T: Real>(
    w: &VelocityField<T>,
    u: &VelocityField<T>,
    grid: &Grid<T>,
) -> Result<VelocityField<T>> {
    grid.check(w.nx(), w.ny())?;
    grid.check(u.nx(), u.ny())?;
    Ok(convection_unchecked(w, u, grid))
}

fn convection_unchecked<T: Real>(
    w: &VelocityField<T>,
    u: &VelocityField<T>,
    grid: &Grid<T>,
) -> VelocityField<T> {
    let [w1, w2] = center_average_unchecked(w, grid);
    let [c1, c2] = center_average_unchecked(u, grid);
    let mut gu = TensorCellField::zeros(grid);
    grad_tensor_into(u, grid, &mut gu);
    let mut adv1 = w1.clone();
    let mut adv2 = w2.clone();
    let mut outer = TensorCellField::zeros(grid);
    for c in 0..gu.n_cells() {
        let (a, b) = (w1.values()[c], w2.values()[c]);
        let m = gu.at_index(c);
        adv1.values_mut()[c] = m[0][0] * a + m[0][1] * b;
        adv2.values_mut()[c] = m[1][0] * a + m[1][1] * b;
        let (u1, u2) = (c1.values()[c], c2.values()[c]);
        outer.set_index(c, [[u1 * a, u1 * b], [u2 * a, u2 * b]]);
    }
    let first = center_average_transpose(&[adv1, adv2], grid);
    let second = grad_tensor_transpose(&outer, grid);
    VelocityField::lincomb(T::half(), &first, -T::half(), &second)
}

/// `min(1, M^2 / ||W||_{V,h}^2)`.
fn truncation_factor<T: Real>(w: &VelocityField<T>, m: T, grid: &Grid<T>) -> T {
    let n = v_norm(w, grid).expect("shapes checked");
    if n <= m {
        T::one()
    } else {
        (m / n) * (m / n)
    }
}

/// Convection truncated outside the ball of radius `M` in the discrete `H^1`
/// norm of the advecting field.
pub fn truncate_bm<T: Real>(
    w: &VelocityField<T>,
    u: &VelocityField<T>,
    m: T,
    grid: &Grid<T>,
) -> Result<VelocityField<T>> {
    if !(m > T::zero()) {
        return Err(BinghamError::invariant(
            "truncation radius",
            "M must be positive",
        ));
    }
    grid.check(w.nx(), w.ny())?;
    grid.check(u.nx(), u.ny())?;
    Ok(truncate_bm_unchecked(w, u, m, grid))
}

pub(crate) fn truncate_bm_unchecked<T: Real>(
    w: &VelocityField<T>,
    u: &VelocityField<T>,
    m: T,
    grid: &Grid<T>,
) -> VelocityField<T> {
    let out = convection_unchecked(w, u, grid);
    let factor = truncation_factor(w, m, grid);
    if factor == T::one() {
        out
    } else {
        out.scaled(factor)
    }
}

#[derive(Debug, Clone)]
pub struct EvolutionProblem<T> {
    grid: Grid<T>,
    params: PhysicsParams<T>,
    f: VectorData<T>,
    g: ScalarData<T>,
    u0: VelocityField<T>,
    t_final: T,
    n_steps: usize,
    m: T,
    tol: SolverTolerances<T>,
}

impl<T: Real> EvolutionProblem<T> {
    /// The truncation radius defaults to `10 ||u0||_{V,h}` (or 1 when `u0 = 0`).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        grid: Grid<T>,
        params: PhysicsParams<T>,
        f: VectorData<T>,
        g: ScalarData<T>,
        u0: VelocityField<T>,
        t_final: T,
        n_steps: usize,
        tol: SolverTolerances<T>,
    ) -> Result<Self> {
        grid.check(u0.nx(), u0.ny())?;
        if !(t_final > T::zero()) || !t_final.is_finite() {
            return Err(BinghamError::invariant(
                "EvolutionProblem",
                "T must be positive",
            ));
        }
        if n_steps == 0 {
            return Err(BinghamError::invariant(
                "EvolutionProblem",
                "N must be >= 1",
            ));
        }
        if !u0.is_slip_normal() || !u0.all_finite() {
            return Err(BinghamError::invariant(
                "EvolutionProblem",
                "u0 must be finite and slip-normal",
            ));
        }
        tol.validate()?;
        let n0 = v_norm(&u0, &grid)?;
        let m = if n0 > T::zero() {
            T::lit(10.0) * n0
        } else {
            T::one()
        };
        Ok(EvolutionProblem {
            grid,
            params,
            f,
            g,
            u0,
            t_final,
            n_steps,
            m,
            tol,
        })
    }

    pub fn with_truncation(mut self, m: T) -> Result<Self> {
        if !(m > T::zero()) {
            return Err(BinghamError::invariant(
                "EvolutionProblem",
                "M must be positive",
            ));
        }
        self.m = m;
        Ok(self)
    }

    pub fn with_steps(mut self, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(BinghamError::invariant(
                "EvolutionProblem",
                "N must be >= 1",
            ));
        }
        self.n_steps = n_steps;
        Ok(self)
    }

    /// Rejects `u0` unless its wall-adjacent tangential components are
    /// mirror-symmetric up to `10 h`, i.e. it satisfies the discrete slip
    /// traction condition required for strong solutions.
    pub fn require_strong_initial_data(self) -> Result<Self> {
        let r = slip_traction_residual(&self.u0, &self.grid);
        let h = self.grid.hx().max(self.grid.hy());
        if r > T::lit(10.0) * h {
            return Err(BinghamError::invariant(
                "EvolutionProblem",
                format!("u0 violates the slip traction condition (residual {r:e} > 10 h)"),
            ));
        }
        Ok(self)
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }
    pub fn params(&self) -> &PhysicsParams<T> {
        &self.params
    }
    pub fn u0(&self) -> &VelocityField<T> {
        &self.u0
    }
    pub fn t_final(&self) -> T {
        self.t_final
    }
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }
    pub fn step_size(&self) -> T {
        self.t_final / T::from_count(self.n_steps)
    }
    pub fn truncation(&self) -> T {
        self.m
    }
    pub fn tolerances(&self) -> &SolverTolerances<T> {
        &self.tol
    }
    pub fn forcing(&self) -> &VectorData<T> {
        &self.f
    }
    pub fn yield_data(&self) -> &ScalarData<T> {
        &self.g
    }

    fn yield_average(&self, k: usize) -> Result<YieldField<T>> {
        YieldField::new(self.g.time_average(&self.grid, k, self.step_size())?, false)
    }

    fn yield_at_zero(&self) -> Result<YieldField<T>> {
        YieldField::new(self.g.sample(&self.grid, T::zero())?, false)
    }
}

/// Largest one-sided normal difference quotient of the tangential velocity
/// in the cells touching a wall.
pub fn slip_traction_residual<T: Real>(u: &VelocityField<T>, grid: &Grid<T>) -> T {
    let [c1, c2] = center_average_unchecked(u, grid);
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut r = T::zero();
    for i in 0..nx {
        r = r.max(((c1.get(i, 1) - c1.get(i, 0)) / grid.hy()).abs());
        r = r.max(((c1.get(i, ny - 1) - c1.get(i, ny - 2)) / grid.hy()).abs());
    }
    for j in 0..ny {
        r = r.max(((c2.get(1, j) - c2.get(0, j)) / grid.hx()).abs());
        r = r.max(((c2.get(nx - 1, j) - c2.get(nx - 2, j)) / grid.hx()).abs());
    }
    r
}

fn step_with<T: Real>(
    problem: &EvolutionProblem<T>,
    poisson: &NeumannPoisson<T>,
    u_prev: &VelocityField<T>,
    p_prev: &ScalarCellField<T>,
    f_k: &VelocityField<T>,
    g_k: &YieldField<T>,
) -> StationarySolution<T> {
    let h = problem.step_size();
    let system = NonlinearSystem {
        grid: &problem.grid,
        poisson,
        params: problem.params,
        g: g_k,
        f: f_k,
        terms: StepTerms {
            mass: h.recip(),
            u_prev: Some(u_prev),
            convection: Some(problem.m),
        },
        tol: &problem.tol,
    };
    let (u, p, report) = system.solve(u_prev, p_prev);
    StationarySolution { u, p, report }
}

/// One implicit step: solves
/// `(u - u_prev)/h + grad_J(u; g_k) + B_M(u, u) + grad_p(p) = f_k`, `div u = 0`.
pub fn rothe_step<T: Real>(
    problem: &EvolutionProblem<T>,
    u_prev: &VelocityField<T>,
    f_k: &VelocityField<T>,
    g_k: &YieldField<T>,
) -> Result<StationarySolution<T>> {
    let grid = &problem.grid;
    grid.check(u_prev.nx(), u_prev.ny())?;
    grid.check(f_k.nx(), f_k.ny())?;
    grid.check(g_k.field().nx(), g_k.field().ny())?;
    let poisson = NeumannPoisson::new(grid);
    Ok(step_with(
        problem,
        &poisson,
        u_prev,
        &ScalarCellField::zeros(grid),
        f_k,
        g_k,
    ))
}

/// Computed states `u_0, ..., u_N` with the two standard interpolants.
#[derive(Debug, Clone)]
pub struct Trajectory<T> {
    h: T,
    states: Vec<VelocityField<T>>,
    pressures: Vec<ScalarCellField<T>>,
}

impl<T: Real> Trajectory<T> {
    pub fn step_size(&self) -> T {
        self.h
    }

    /// `u_0, ..., u_n` for the completed steps.
    pub fn states(&self) -> &[VelocityField<T>] {
        &self.states
    }

    /// `p_1, ..., p_n`.
    pub fn pressures(&self) -> &[ScalarCellField<T>] {
        &self.pressures
    }

    pub fn final_state(&self) -> &VelocityField<T> {
        self.states.last().expect("u0 is always stored")
    }

    fn last_time(&self) -> T {
        self.h * T::from_count(self.states.len() - 1)
    }

    /// Piecewise-linear interpolant at `t` (clamped to the computed range).
    pub fn hat(&self, t: T) -> VelocityField<T> {
        let t = t.max(T::zero()).min(self.last_time());
        let s = t / self.h;
        let k = s
            .floor()
            .to_usize()
            .unwrap_or(0)
            .min(self.states.len().saturating_sub(2));
        if self.states.len() == 1 {
            return self.states[0].clone();
        }
        let theta = s - T::from_count(k);
        VelocityField::lincomb(
            T::one() - theta,
            &self.states[k],
            theta,
            &self.states[k + 1],
        )
    }

    /// Piecewise-constant interpolant: `u_k` on `((k-1)h, kh]`, and `u_1` at
    /// `t = 0`.
    pub fn bar(&self, t: T) -> VelocityField<T> {
        if self.states.len() == 1 {
            return self.states[0].clone();
        }
        let t = t.max(T::zero()).min(self.last_time());
        let k = (t / self.h).ceil().to_usize().unwrap_or(1).max(1);
        self.states[k.min(self.states.len() - 1)].clone()
    }
}

/// Per-step entries of the energy ledger (all in discrete norms).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedgerRow {
    pub k: usize,
    pub t: f64,
    /// `||u_k||^2`
    pub u_sq: f64,
    /// `||u_k - u_{k-1}||^2`
    pub jump_sq: f64,
    /// `nu ||u_k||_V^2 h`
    pub visc_h: f64,
    /// `(g_k, |grad u_k|) h`
    pub yield_h: f64,
    /// `||(u_k - u_{k-1}) / h||^2`
    pub rate_sq: f64,
    /// `||grad (u_k - u_{k-1})||^2`
    pub grad_jump_sq: f64,
    /// `||grad u_k||^2`
    pub grad_sq: f64,
    /// `(g_k, |grad u_k|)`
    pub yield_k: f64,
    /// `|u_k|_{H^2}^2`
    pub h2_sq: f64,
    /// `||u*_k||^2` with `u*_k = P f_k - (u_k - u_{k-1})/h - P B_M u_k`.
    pub ustar_sq: f64,
    /// `||grad((u_k - u_{k-1}) / h)||^2 h`, recorded only.
    pub grad_rate_sq_h: f64,
    pub f_sq: f64,
    pub g_h1_sq: f64,
    pub g_l2: f64,
    /// `||(g_k - g_{k-1}) / h||`, with `g_0 = g(0)`.
    pub g_rate: f64,
    pub picard_iters: usize,
    pub momentum_residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyLedger {
    pub n_steps: usize,
    pub h: f64,
    pub nu: f64,
    pub u0_sq: f64,
    pub grad_u0_sq: f64,
    /// `(g(0), |grad u0|)`
    pub yield0: f64,
    pub rows: Vec<LedgerRow>,
}

impl EnergyLedger {
    /// `sum_k (||u_k||^2 - ||u_{k-1}||^2) - (||u_n||^2 - ||u_0||^2)`, relative.
    pub fn telescoping_defect(&self) -> f64 {
        let mut prev = self.u0_sq;
        let mut sum = 0.0;
        for r in &self.rows {
            sum += r.u_sq - prev;
            prev = r.u_sq;
        }
        let direct = prev - self.u0_sq;
        let scale = self.u0_sq.max(prev).max(f64::MIN_POSITIVE);
        (sum - direct).abs() / scale
    }

    pub fn all_finite_nonnegative(&self) -> bool {
        self.rows.iter().all(|r| {
            [
                r.u_sq,
                r.jump_sq,
                r.visc_h,
                r.yield_h,
                r.rate_sq,
                r.grad_jump_sq,
                r.grad_sq,
                r.yield_k,
                r.h2_sq,
                r.ustar_sq,
                r.grad_rate_sq_h,
            ]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0)
        })
    }

    /// Left-hand sides of the three a-priori estimates and their data terms.
    pub fn aggregates(&self) -> LedgerAggregates {
        let last = self.rows.last();
        let first = last.map_or(self.u0_sq, |r| r.u_sq)
            + self
                .rows
                .iter()
                .map(|r| r.jump_sq + r.visc_h + r.yield_h)
                .sum::<f64>();
        let mut peak = 0.5 * self.nu * self.grad_u0_sq + self.yield0;
        for r in &self.rows {
            peak = peak.max(r.grad_sq + r.yield_k);
        }
        let second = peak
            + self
                .rows
                .iter()
                .map(|r| (r.ustar_sq + r.h2_sq + r.rate_sq) * self.h)
                .sum::<f64>();
        let fourth = self.rows.iter().map(|r| r.grad_jump_sq).sum::<f64>();
        let f_l2_sq: f64 = self.rows.iter().map(|r| r.f_sq * self.h).sum();
        let g_l2h1_sq: f64 = self.rows.iter().map(|r| r.g_h1_sq * self.h).sum();
        let g_w11: f64 = self.rows.iter().map(|r| (r.g_l2 + r.g_rate) * self.h).sum();
        LedgerAggregates {
            n_steps: self.n_steps,
            first,
            second,
            fourth,
            data_first: self.u0_sq + f_l2_sq,
            data_second: self.grad_u0_sq + f_l2_sq + g_l2h1_sq + g_w11 * g_w11,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LedgerAggregates {
    pub n_steps: usize,
    /// `||u_N||^2 + sum ||u_k - u_{k-1}||^2 + nu sum ||u_k||_V^2 h + sum (g_k, |grad u_k|) h`
    pub first: f64,
    /// `max_m (||grad u_m||^2 + (g_m, |grad u_m|)) + sum (||u*_k||^2 + |u_k|_{H^2}^2 + ||rate_k||^2) h`
    pub second: f64,
    /// `sum ||grad (u_k - u_{k-1})||^2`
    pub fourth: f64,
    /// `||u_0||^2 + ||f||^2_{L^2 L^2}`
    pub data_first: f64,
    /// `||grad u_0||^2 + ||f||^2_{L^2 L^2} + ||g||^2_{L^2 H^1} + ||g||^2_{W^{1,1} L^2}`
    pub data_second: f64,
}

impl LedgerAggregates {
    fn ratio(a: f64, b: f64) -> f64 {
        if b > 0.0 {
            a / b
        } else {
            a
        }
    }
    pub fn ratio_first(&self) -> f64 {
        Self::ratio(self.first, self.data_first)
    }
    pub fn ratio_second(&self) -> f64 {
        Self::ratio(self.second, self.data_second)
    }
    pub fn ratio_fourth(&self) -> f64 {
        Self::ratio(self.fourth, self.data_second)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedgerAudit {
    pub levels: Vec<LedgerAggregates>,
    /// Largest relative spread `max/min - 1` of the first aggregate.
    pub first_spread: f64,
    /// The first aggregate stays within 20% across all levels.
    pub first_uniform: bool,
    /// Each ratio grows by at most 20% from one refinement to the next.
    pub bounded: bool,
    pub max_telescoping_defect: f64,
}

/// Compares ledgers of the same problem run with increasing `N`.
pub fn ledger_audit(ledgers: &[EnergyLedger]) -> LedgerAudit {
    let levels: Vec<LedgerAggregates> = ledgers.iter().map(|l| l.aggregates()).collect();
    let firsts: Vec<f64> = levels.iter().map(|a| a.first).collect();
    let max = firsts.iter().cloned().fold(0.0, f64::max);
    let min = firsts.iter().cloned().fold(f64::INFINITY, f64::min);
    let first_spread = if max == 0.0 { 0.0 } else { max / min - 1.0 };
    let mut bounded = true;
    for w in levels.windows(2) {
        for (a, b) in [
            (w[0].ratio_first(), w[1].ratio_first()),
            (w[0].ratio_second(), w[1].ratio_second()),
            (w[0].ratio_fourth(), w[1].ratio_fourth()),
        ] {
            if b > 1.2 * a + f64::MIN_POSITIVE {
                bounded = false;
            }
        }
    }
    LedgerAudit {
        first_uniform: first_spread <= 0.2,
        first_spread,
        bounded,
        max_telescoping_defect: ledgers
            .iter()
            .map(|l| l.telescoping_defect())
            .fold(0.0, f64::max),
        levels,
    }
}

/// Discrete local-existence time: the largest step time `t_m` with
/// `y0 * sum_{k<=m} a_k h <= 1/2`, where
/// `a_k = C (||f_k||^2 + ||g_k||_{H^1}^2 + ||(g_k - g_{k-1})/h|| + ||grad u_k||^2)` and
/// `y0 = nu/2 ||grad u0||^2 + (g(0), |grad u0|) + 1`. With `two_dimensional`
/// the full horizon is returned.
pub fn tstar_estimate(ledger: &EnergyLedger, c_user: f64, two_dimensional: bool) -> Result<f64> {
    if !(c_user > 0.0) || !c_user.is_finite() {
        return Err(BinghamError::invariant("C_user", "must be positive"));
    }
    let horizon = ledger.h * ledger.n_steps as f64;
    if two_dimensional {
        return Ok(horizon);
    }
    let y0 = 0.5 * ledger.nu * ledger.grad_u0_sq + ledger.yield0 + 1.0;
    let mut integral = 0.0;
    let mut tstar = 0.0;
    for r in &ledger.rows {
        let a = c_user * (r.f_sq + r.g_h1_sq + r.g_rate + r.grad_sq);
        integral += a * ledger.h;
        if y0 * integral <= 0.5 {
            tstar = r.t;
        } else {
            break;
        }
    }
    Ok(tstar)
}

#[derive(Debug, Clone)]
pub struct EvolveOutput<T> {
    pub trajectory: Trajectory<T>,
    pub ledger: EnergyLedger,
    pub reports: Vec<SolveReport>,
    /// `Converged` unless the run stopped after three consecutive flagged steps.
    pub status: SolveStatus,
    pub wall_time_s: f64,
}

/// Runs all `N` steps with warm starts and records the ledger.
pub fn evolve<T: Real>(problem: &EvolutionProblem<T>) -> Result<EvolveOutput<T>> {
    let start = Instant::now();
    let grid = &problem.grid;
    let h = problem.step_size();
    let poisson = NeumannPoisson::new(grid);
    let g0 = problem.yield_at_zero()?;
    let u0 = problem.u0.clone();
    let grad_u0 = h1_semi(&u0, grid)?;
    let mut ledger = EnergyLedger {
        n_steps: problem.n_steps,
        h: h.as_f64(),
        nu: problem.params.nu().as_f64(),
        u0_sq: sq(u0.l2_norm(grid)),
        grad_u0_sq: sq(grad_u0),
        yield0: l1_weighted(g0.field(), &u0, grid)?.as_f64(),
        rows: Vec::with_capacity(problem.n_steps),
    };
    let mut states = vec![u0];
    let mut pressures = Vec::with_capacity(problem.n_steps);
    let mut reports = Vec::with_capacity(problem.n_steps);
    let mut p_prev = ScalarCellField::zeros(grid);
    let mut g_prev = g0;
    let mut flagged_run = 0;
    let mut status = SolveStatus::Converged;
    for k in 1..=problem.n_steps {
        let f_k = problem.f.time_average(grid, k, h)?;
        let g_k = problem.yield_average(k)?;
        let u_prev = states.last().expect("nonempty").clone();
        let sol = step_with(problem, &poisson, &u_prev, &p_prev, &f_k, &g_k);
        let row = ledger_row(problem, &poisson, k, &u_prev, &sol, &f_k, &g_k, &g_prev)?;
        ledger.rows.push(row);
        if sol.report.converged() {
            flagged_run = 0;
        } else {
            flagged_run += 1;
            log::warn!("step {k} did not converge: {:?}", sol.report.status);
        }
        p_prev = sol.p.clone();
        states.push(sol.u);
        pressures.push(sol.p);
        let last_status = sol.report.status.clone();
        reports.push(sol.report);
        g_prev = g_k;
        if flagged_run >= 3 {
            status = match last_status {
                SolveStatus::NonConvergence {
                    stage, residual, ..
                } => SolveStatus::NonConvergence {
                    stage,
                    iters: k,
                    residual,
                },
                SolveStatus::Converged => SolveStatus::NonConvergence {
                    stage: Stage::Picard,
                    iters: k,
                    residual: f64::NAN,
                },
            };
            break;
        }
    }
    Ok(EvolveOutput {
        trajectory: Trajectory {
            h,
            states,
            pressures,
        },
        ledger,
        reports,
        status,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

fn sq<T: Real>(v: T) -> f64 {
    let x = v.as_f64();
    x * x
}

#[allow(clippy::too_many_arguments)]
fn ledger_row<T: Real>(
    problem: &EvolutionProblem<T>,
    poisson: &NeumannPoisson<T>,
    k: usize,
    u_prev: &VelocityField<T>,
    sol: &StationarySolution<T>,
    f_k: &VelocityField<T>,
    g_k: &YieldField<T>,
    g_prev: &YieldField<T>,
) -> Result<LedgerRow> {
    let grid = &problem.grid;
    let h = problem.step_size();
    let u = &sol.u;
    let jump = u.sub(u_prev);
    let rate = jump.scaled(h.recip());
    let grad_jump = h1_semi(&jump, grid)?;
    let grad_u = h1_semi(u, grid)?;
    let yield_k = l1_weighted(g_k.field(), u, grid)?;
    let conv = truncate_bm_unchecked(u, u, problem.m, grid);
    let mut ustar = poisson.project(&f_k.sub(&conv), grid);
    ustar.axpy(-T::one(), &rate);
    let mut dg = g_k.field().clone();
    dg.axpy(-T::one(), g_prev.field());
    Ok(LedgerRow {
        k,
        t: (h * T::from_count(k)).as_f64(),
        u_sq: sq(u.l2_norm(grid)),
        jump_sq: sq(jump.l2_norm(grid)),
        visc_h: (problem.params.nu() * sq_t(v_norm(u, grid)?) * h).as_f64(),
        yield_h: (yield_k * h).as_f64(),
        rate_sq: sq(rate.l2_norm(grid)),
        grad_jump_sq: sq(grad_jump),
        grad_sq: sq(grad_u),
        yield_k: yield_k.as_f64(),
        h2_sq: sq(h2_semi(u, grid)?),
        ustar_sq: sq(ustar.l2_norm(grid)),
        grad_rate_sq_h: sq(h1_semi(&rate, grid)?) * h.as_f64(),
        f_sq: sq(f_k.l2_norm(grid)),
        g_h1_sq: sq(h1_norm_cell(g_k.field(), grid)?),
        g_l2: g_k.field().l2_norm(grid).as_f64(),
        g_rate: (dg.l2_norm(grid) / h).as_f64(),
        picard_iters: sol.report.picard_iters,
        momentum_residual: sol.report.momentum_residual,
        converged: sol.report.converged(),
    })
}

fn sq_t<T: Real>(v: T) -> T {
    v * v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Closure;
    use crate::grid::inner_velocity;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn random_field(grid: &Grid<f64>, rng: &mut ChaCha8Rng) -> VelocityField<f64> {
        let rng = std::cell::RefCell::new(rng);
        VelocityField::from_fn(
            grid,
            |_, _| rng.borrow_mut().gen_range(-1.0..1.0),
            |_, _| rng.borrow_mut().gen_range(-1.0..1.0),
        )
    }

    #[test]
    fn skew_identity_on_random_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [4, 8, 13] {
            let grid = Grid::new(1.0, 1.5, n, n + 2).unwrap();
            for _ in 0..20 {
                let w = random_field(&grid, &mut rng);
                let u = random_field(&grid, &mut rng);
                let b = convection_b(&w, &u, &grid).unwrap();
                let scale = w.l2_norm(&grid) * u.l2_norm(&grid).powi(2);
                assert!(inner_velocity(&b, &u, &grid).abs() <= 1e-13 * scale * (n as f64));
                assert!(b.is_slip_normal());
            }
        }
    }

    #[test]
    fn convection_vanishes_with_either_argument() {
        let grid = Grid::square(1.0, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = random_field(&grid, &mut rng);
        let z = VelocityField::zeros(&grid);
        assert_eq!(convection_b(&z, &u, &grid).unwrap().linf_norm(), 0.0);
        assert_eq!(convection_b(&u, &z, &grid).unwrap().linf_norm(), 0.0);
    }

    #[test]
    fn truncation_branches() {
        let grid = Grid::square(1.0, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = random_field(&grid, &mut rng);
        let u = random_field(&grid, &mut rng);
        let n = v_norm(&w, &grid).unwrap();
        let b = convection_b(&w, &u, &grid).unwrap();
        assert_eq!(truncate_bm(&w, &u, 2.0 * n, &grid).unwrap(), b);
        assert_eq!(truncate_bm(&w, &u, 1e30, &grid).unwrap(), b);
        let quarter = truncate_bm(&w, &u, 0.5 * n, &grid).unwrap();
        assert!(quarter.sub(&b.scaled(0.25)).linf_norm() <= 1e-15 * b.linf_norm());
        assert!(truncate_bm(&w, &u, 0.0, &grid).is_err());
    }

    fn tg_decay(n: usize, steps: usize, t_final: f64) -> EvolveOutput<f64> {
        let pi = std::f64::consts::PI;
        let grid = Grid::square(pi, n).unwrap();
        let u0 = VelocityField::from_fn(&grid, |x, y| x.sin() * y.cos(), |x, y| -x.cos() * y.sin());
        let pr = EvolutionProblem::new(
            grid,
            PhysicsParams::new(1.0, 0.1).unwrap(),
            VectorData::zero(),
            ScalarData::zero(),
            u0,
            t_final,
            steps,
            SolverTolerances::default(),
        )
        .unwrap()
        .require_strong_initial_data()
        .unwrap();
        evolve(&pr).unwrap()
    }

    #[test]
    fn decaying_vortex_dissipates_and_interpolates() {
        let out = tg_decay(12, 4, 0.2);
        assert_eq!(out.status, SolveStatus::Converged);
        let rows = &out.ledger.rows;
        assert!(rows.windows(2).all(|w| w[1].u_sq <= w[0].u_sq));
        assert!(rows[0].u_sq <= out.ledger.u0_sq);
        assert!(out.ledger.telescoping_defect() <= 1e-12);
        assert!(out.ledger.all_finite_nonnegative());
        let tr = &out.trajectory;
        let mid = tr.hat(0.5 * tr.step_size());
        let avg = VelocityField::lincomb(0.5, &tr.states()[0], 0.5, &tr.states()[1]);
        assert!(mid.sub(&avg).linf_norm() <= 1e-15);
        assert_eq!(tr.bar(0.75 * tr.step_size()), tr.states()[1]);
        assert_eq!(tr.bar(tr.step_size()), tr.states()[1]);
    }

    #[test]
    fn zero_data_stays_zero() {
        let grid = Grid::square(1.0, 6).unwrap();
        let pr = EvolutionProblem::new(
            grid,
            PhysicsParams::new(1.0, 0.1).unwrap(),
            VectorData::zero(),
            ScalarData::Function(Arc::new(Closure::new(|x: f64, _y, _t| x))),
            VelocityField::zeros(&grid),
            1.0,
            3,
            SolverTolerances::default(),
        )
        .unwrap();
        let out = evolve(&pr).unwrap();
        assert!(out.trajectory.states().iter().all(|u| u.linf_norm() == 0.0));
        let agg = out.ledger.aggregates();
        assert_eq!((agg.first, agg.fourth), (0.0, 0.0));
        assert_eq!(tstar_estimate(&out.ledger, 1.0, true).unwrap(), 1.0);
    }

    #[test]
    fn tstar_monotone_in_constant() {
        let out = tg_decay(8, 10, 0.5);
        let a = tstar_estimate(&out.ledger, 0.01, false).unwrap();
        let b = tstar_estimate(&out.ledger, 0.02, false).unwrap();
        assert!(b <= a);
        assert!(tstar_estimate(&out.ledger, -1.0, false).is_err());
    }

    #[test]
    fn non_slip_initial_data_rejected_in_strong_mode() {
        let grid = Grid::square(1.0, 16).unwrap();
        let u0 = VelocityField::from_fn(&grid, |_, y| y, |_, _| 0.0);
        let pr = EvolutionProblem::new(
            grid,
            PhysicsParams::new(1.0, 0.1).unwrap(),
            VectorData::zero(),
            ScalarData::zero(),
            u0,
            1.0,
            2,
            SolverTolerances::default(),
        )
        .unwrap();
        let err = pr.require_strong_initial_data().unwrap_err();
        assert!(err.to_string().contains("EvolutionProblem"));
    }
}
