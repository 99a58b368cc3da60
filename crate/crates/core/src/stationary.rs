//! Regularized stationary Bingham-Stokes solver and studies built on it.
//!
//! The nonlinear system `grad_J(U) + grad_p(p) = f`, `div U = 0` is solved by
//! a Picard (Kacanov) iteration: the effective viscosity is frozen at the
//! current iterate, which turns each step into a variable-coefficient Stokes
//! problem. That problem is solved by conjugate gradients on the pressure
//! Schur complement (an accelerated Uzawa iteration) with inner Jacobi-CG
//! velocity solves.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::energy::{
    apply_weighted, energy_from_gradient, grad_j, viscosity_from_gradient, PhysicsParams,
    YieldField,
};
use crate::error::{BinghamError, Result, Stage};
use crate::grid::{
    div_u_unchecked, grad_p_unchecked, grad_tensor, grad_tensor_into, h1_semi, h2_semi,
    inner_tensor, inner_velocity, v_norm, weighted_operator_diagonal, FieldNorms, Grid,
    ScalarCellField, TensorCellField, VelocityField,
};
use crate::linalg::{pcg, NeumannPoisson};
use crate::scalar::Real;

/// Relative tolerances and iteration caps shared by the stationary and
/// time-stepping solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverTolerances<T> {
    /// Full nonlinear residual relative to the forcing norm.
    pub tol_picard: T,
    /// `||div U||_h` relative to `||U||_{H^1,h}`.
    pub tol_uzawa: T,
    /// Relative residual of each inner velocity solve.
    pub tol_cg: T,
    pub max_picard: usize,
    pub max_uzawa: usize,
    pub max_cg: usize,
}

impl<T: Real> Default for SolverTolerances<T> {
    fn default() -> Self {
        SolverTolerances {
            tol_picard: T::lit(1e-8),
            tol_uzawa: T::lit(1e-9),
            tol_cg: T::lit(1e-11),
            max_picard: 2000,
            max_uzawa: 500,
            max_cg: 5000,
        }
    }
}

impl<T: Real> SolverTolerances<T> {
    pub fn validate(&self) -> Result<()> {
        let cap = T::lit(1e-2);
        for (name, v) in [
            ("tol_picard", self.tol_picard),
            ("tol_uzawa", self.tol_uzawa),
            ("tol_cg", self.tol_cg),
        ] {
            if !(v > T::zero() && v <= cap) {
                return Err(BinghamError::invariant(
                    "SolverTolerances",
                    format!("{name} must lie in (0, 1e-2], got {v}"),
                ));
            }
        }
        if self.max_picard == 0 || self.max_uzawa == 0 || self.max_cg == 0 {
            return Err(BinghamError::invariant(
                "SolverTolerances",
                "max_iters must be >= 1",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct StationaryProblem<T> {
    grid: Grid<T>,
    params: PhysicsParams<T>,
    f: VelocityField<T>,
    g: YieldField<T>,
    tol: SolverTolerances<T>,
}

impl<T: Real> StationaryProblem<T> {
    pub fn new(
        grid: Grid<T>,
        params: PhysicsParams<T>,
        f: VelocityField<T>,
        g: YieldField<T>,
        tol: SolverTolerances<T>,
    ) -> Result<Self> {
        grid.check(f.nx(), f.ny())?;
        grid.check(g.field().nx(), g.field().ny())?;
        if !f.all_finite() {
            return Err(BinghamError::invariant(
                "StationaryProblem",
                "forcing must be finite",
            ));
        }
        if !f.is_slip_normal() {
            return Err(BinghamError::invariant(
                "StationaryProblem",
                "forcing must vanish on boundary-normal faces",
            ));
        }
        tol.validate()?;
        Ok(StationaryProblem {
            grid,
            params,
            f,
            g,
            tol,
        })
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }
    pub fn params(&self) -> &PhysicsParams<T> {
        &self.params
    }
    pub fn forcing(&self) -> &VelocityField<T> {
        &self.f
    }
    pub fn yield_stress(&self) -> &YieldField<T> {
        &self.g
    }
    pub fn tolerances(&self) -> &SolverTolerances<T> {
        &self.tol
    }

    pub fn with_epsilon(&self, epsilon: T) -> Result<Self> {
        let mut out = self.clone();
        out.params = self.params.with_epsilon(epsilon)?;
        Ok(out)
    }

    pub fn with_forcing(&self, f: VelocityField<T>) -> Result<Self> {
        Self::new(self.grid, self.params, f, self.g.clone(), self.tol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    NonConvergence {
        stage: Stage,
        iters: usize,
        residual: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub epsilon: f64,
    pub picard_iters: usize,
    pub uzawa_iters_total: usize,
    pub cg_iters_total: usize,
    /// `||grad_J(U) + grad_p(p) - f||_h` recomputed from the returned pair
    /// (mass and convection terms included for time steps).
    pub momentum_residual: f64,
    pub momentum_scale: f64,
    /// `||div U||_h` of the returned field.
    pub divergence_residual: f64,
    pub velocity_h1: f64,
    pub energy: f64,
    /// Merit value after each accepted Picard step (stationary case only).
    pub merit_history: Vec<f64>,
    pub wall_time_s: f64,
    pub status: SolveStatus,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }

    /// The status as an error value, if the solve did not converge.
    pub fn error(&self) -> Option<BinghamError> {
        match self.status {
            SolveStatus::Converged => None,
            SolveStatus::NonConvergence {
                stage,
                iters,
                residual,
            } => Some(BinghamError::NonConvergence {
                stage,
                iters,
                residual,
            }),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StationarySolution<T> {
    pub u: VelocityField<T>,
    pub p: ScalarCellField<T>,
    pub report: SolveReport,
}

// ---------------------------------------------------------------------------
// Linear saddle-point solver
// ---------------------------------------------------------------------------

/// `mass * U + grad^T (a grad U)` with a frozen cell coefficient `a`.
pub(crate) struct FrozenStokes<'a, T> {
    grid: &'a Grid<T>,
    poisson: &'a NeumannPoisson<T>,
    a: ScalarCellField<T>,
    mass: T,
    diag_inv: VelocityField<T>,
    tol: &'a SolverTolerances<T>,
}

#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct InnerStats {
    pub uzawa_iters: usize,
    pub cg_iters: usize,
    pub failure: Option<(Stage, usize, f64)>,
}

impl<'a, T: Real> FrozenStokes<'a, T> {
    pub(crate) fn new(
        grid: &'a Grid<T>,
        poisson: &'a NeumannPoisson<T>,
        a: ScalarCellField<T>,
        mass: T,
        tol: &'a SolverTolerances<T>,
    ) -> Self {
        let mut diag = weighted_operator_diagonal(&a, grid);
        let (nx, ny) = (grid.nx(), grid.ny());
        for j in 0..ny {
            for i in 1..nx {
                diag.set_u1(i, j, (diag.u1(i, j) + mass).recip());
            }
        }
        for j in 1..ny {
            for i in 0..nx {
                diag.set_u2(i, j, (diag.u2(i, j) + mass).recip());
            }
        }
        diag.enforce_slip_normal();
        FrozenStokes {
            grid,
            poisson,
            a,
            mass,
            diag_inv: diag,
            tol,
        }
    }

    fn apply(&self, v: &VelocityField<T>, scratch: &mut TensorCellField<T>) -> VelocityField<T> {
        let mut out = apply_weighted(v, &self.a, self.grid, scratch);
        if self.mass != T::zero() {
            out.axpy(self.mass, v);
        }
        out
    }

    fn solve_velocity(
        &self,
        b: &VelocityField<T>,
        x: &mut VelocityField<T>,
        stats: &mut InnerStats,
    ) {
        let mut scratch = TensorCellField::zeros(self.grid);
        let out = pcg(
            |v: &VelocityField<T>| self.apply(v, &mut scratch),
            |r: &VelocityField<T>| r.hadamard(&self.diag_inv),
            b,
            x,
            self.tol.tol_cg,
            T::zero(),
            self.tol.max_cg,
        );
        stats.cg_iters += out.iters;
        if !out.converged {
            stats.failure = Some((Stage::Cg, out.iters, out.rel_residual.as_f64()));
        }
    }

    fn schur_precond(&self, r: &ScalarCellField<T>) -> ScalarCellField<T> {
        let mut z = r.clone();
        for (zv, &av) in z.values_mut().iter_mut().zip(self.a.values()) {
            *zv *= av;
        }
        if self.mass != T::zero() {
            z.axpy(self.mass, &self.poisson.solve(r));
        }
        z.subtract_mean();
        z
    }

    /// Solves `K u + grad_p p = b`, `div u = 0`, starting from `(u, p)`.
    pub(crate) fn solve(
        &self,
        b: &VelocityField<T>,
        u: &mut VelocityField<T>,
        p: &mut ScalarCellField<T>,
    ) -> InnerStats {
        let grid = self.grid;
        let mut stats = InnerStats::default();
        let dot = |a: &ScalarCellField<T>, c: &ScalarCellField<T>| -> T {
            a.values()
                .iter()
                .zip(c.values())
                .map(|(&x, &y)| x * y)
                .sum()
        };
        p.subtract_mean();
        let rhs = b.sub(&grad_p_unchecked(p, grid));
        self.solve_velocity(&rhs, u, &mut stats);
        let target = |u: &VelocityField<T>| {
            let h1 = v_norm(u, grid).unwrap_or(T::zero());
            T::half() * self.tol.tol_uzawa * h1 + T::min_positive_value()
        };
        let neg_div = |u: &VelocityField<T>| {
            let mut r = div_u_unchecked(u, grid);
            r.scale(-T::one());
            r
        };
        let mut r = neg_div(u);
        if r.l2_norm(grid) <= target(u) {
            return stats;
        }
        let mut z = self.schur_precond(&r);
        let mut d = z.clone();
        let mut rz = dot(&r, &z);
        for it in 1..=self.tol.max_uzawa {
            stats.uzawa_iters = it;
            let mut w = VelocityField::zeros(grid);
            self.solve_velocity(&grad_p_unchecked(&d, grid), &mut w, &mut stats);
            let q = neg_div(&w);
            let dq = dot(&d, &q);
            if !(dq > T::zero()) {
                stats.failure = Some((Stage::Uzawa, it, r.l2_norm(grid).as_f64()));
                return stats;
            }
            let alpha = rz / dq;
            p.axpy(alpha, &d);
            u.axpy(-alpha, &w);
            r = neg_div(u);
            if r.l2_norm(grid) <= target(u) {
                p.subtract_mean();
                return stats;
            }
            z = self.schur_precond(&r);
            let rz_new = dot(&r, &z);
            d.scale(rz_new / rz);
            d.axpy(T::one(), &z);
            rz = rz_new;
        }
        p.subtract_mean();
        stats.failure = Some((Stage::Uzawa, self.tol.max_uzawa, r.l2_norm(grid).as_f64()));
        stats
    }
}

// ---------------------------------------------------------------------------
// Picard driver shared with the time stepper
// ---------------------------------------------------------------------------

/// Lower-order terms of one nonlinear solve.
pub(crate) struct StepTerms<'a, T> {
    /// `1/h` for a time step, zero for the stationary problem.
    pub mass: T,
    pub u_prev: Option<&'a VelocityField<T>>,
    /// Truncation radius when skew convection is present.
    pub convection: Option<T>,
}

pub(crate) struct NonlinearSystem<'a, T> {
    pub grid: &'a Grid<T>,
    pub poisson: &'a NeumannPoisson<T>,
    pub params: PhysicsParams<T>,
    pub g: &'a YieldField<T>,
    pub f: &'a VelocityField<T>,
    pub terms: StepTerms<'a, T>,
    pub tol: &'a SolverTolerances<T>,
}

impl<'a, T: Real> NonlinearSystem<'a, T> {
    fn convection(&self, u: &VelocityField<T>) -> Option<VelocityField<T>> {
        self.terms
            .convection
            .map(|m| crate::evolution::truncate_bm_unchecked(u, u, m, self.grid))
    }

    /// Right-hand side of the frozen linear problem: everything except the
    /// `mass * U + grad^T (a grad U)` part.
    fn linear_rhs(&self, u: &VelocityField<T>) -> VelocityField<T> {
        let mut b = self.f.clone();
        if let Some(prev) = self.terms.u_prev {
            b.axpy(self.terms.mass, prev);
        }
        if let Some(c) = self.convection(u) {
            b.axpy(-T::one(), &c);
        }
        b
    }

    /// Momentum residual without pressure.
    fn raw_residual(&self, u: &VelocityField<T>) -> VelocityField<T> {
        let mut r = grad_j(u, &self.params, self.g, self.grid).expect("shapes checked");
        if self.terms.mass != T::zero() {
            r.axpy(self.terms.mass, u);
        }
        r.axpy(-T::one(), &self.linear_rhs(u));
        r
    }

    /// Norm scale for the relative momentum residual.
    fn scale(&self) -> T {
        let mut s = self.f.l2_norm(self.grid);
        if let Some(prev) = self.terms.u_prev {
            s += self.terms.mass * prev.l2_norm(self.grid);
        }
        s
    }

    /// `J(U) + mass/2 ||U - u_prev||^2 - (f, U)`, the quantity each Picard
    /// step decreases; undefined with convection.
    fn merit(&self, u: &VelocityField<T>, scratch: &mut TensorCellField<T>) -> Option<T> {
        if self.terms.convection.is_some() {
            return None;
        }
        grad_tensor_into(u, self.grid, scratch);
        let mut m = energy_from_gradient(scratch, &self.params, self.g, self.grid)
            - inner_velocity(self.f, u, self.grid);
        if let Some(prev) = self.terms.u_prev {
            let d = u.sub(prev);
            m += T::half() * self.terms.mass * inner_velocity(&d, &d, self.grid);
        }
        Some(m)
    }

    /// Best pressure for `U` in the least-squares sense together with the
    /// resulting residual norm.
    fn fit_pressure(&self, u: &VelocityField<T>) -> (ScalarCellField<T>, T) {
        let r = self.raw_residual(u);
        let mut p = self.poisson.solve(&div_u_unchecked(&r, self.grid));
        p.subtract_mean();
        let full = r.add(&grad_p_unchecked(&p, self.grid));
        (p, full.l2_norm(self.grid))
    }

    fn divergence_ok(&self, u: &VelocityField<T>) -> (T, bool) {
        let d = div_u_unchecked(u, self.grid).l2_norm(self.grid);
        let h1 = v_norm(u, self.grid).expect("shapes checked");
        (d, d <= self.tol.tol_uzawa * h1)
    }

    pub(crate) fn solve(
        &self,
        u0: &VelocityField<T>,
        p0: &ScalarCellField<T>,
    ) -> (VelocityField<T>, ScalarCellField<T>, SolveReport) {
        let start = Instant::now();
        let grid = self.grid;
        let tol = self.tol;
        let scale = self.scale();
        let mut report = SolveReport {
            epsilon: self.params.epsilon().as_f64(),
            picard_iters: 0,
            uzawa_iters_total: 0,
            cg_iters_total: 0,
            momentum_residual: 0.0,
            momentum_scale: scale.as_f64(),
            divergence_residual: 0.0,
            velocity_h1: 0.0,
            energy: 0.0,
            merit_history: Vec::new(),
            wall_time_s: 0.0,
            status: SolveStatus::Converged,
        };
        let mut scratch = TensorCellField::zeros(grid);
        if scale == T::zero() {
            let u = VelocityField::zeros(grid);
            let p = ScalarCellField::zeros(grid);
            report.energy = self.energy(&u).as_f64();
            report.wall_time_s = start.elapsed().as_secs_f64();
            return (u, p, report);
        }

        let mut u = u0.clone();
        u.enforce_slip_normal();
        let mut p_lin = p0.clone();
        let (mut p, mut res) = self.fit_pressure(&u);
        let mut best = (res, u.clone(), p.clone());
        let mut merit = self.merit(&u, &mut scratch);
        if let Some(m) = merit {
            report.merit_history.push(m.as_f64());
        }
        let mut inner_failure = None;
        let mut converged = false;
        for it in 0..=tol.max_picard {
            let (_, div_ok) = self.divergence_ok(&u);
            if res <= tol.tol_picard * scale && div_ok {
                converged = true;
                break;
            }
            if it == tol.max_picard {
                break;
            }
            report.picard_iters = it + 1;

            grad_tensor_into(&u, grid, &mut scratch);
            let a = viscosity_from_gradient(&scratch, &self.params, self.g);
            let stokes = FrozenStokes::new(grid, self.poisson, a, self.terms.mass, tol);
            let b = self.linear_rhs(&u);
            let mut u_hat = u.clone();
            let stats = stokes.solve(&b, &mut u_hat, &mut p_lin);
            report.uzawa_iters_total += stats.uzawa_iters;
            report.cg_iters_total += stats.cg_iters;
            if stats.failure.is_some() {
                inner_failure = stats.failure;
            }

            let mut omega = T::one();
            let mut cand = u_hat.clone();
            match merit {
                Some(m0) => {
                    let slack = T::lit(1e-12) * m0.abs().max(T::min_positive_value());
                    let mut m1 = self.merit(&cand, &mut scratch).expect("merit defined");
                    let mut halvings = 0;
                    while m1 > m0 + slack && halvings < 30 {
                        omega *= T::half();
                        cand = VelocityField::lincomb(T::one() - omega, &u, omega, &u_hat);
                        m1 = self.merit(&cand, &mut scratch).expect("merit defined");
                        halvings += 1;
                    }
                    if m1 > m0 + slack {
                        cand = u.clone();
                        m1 = m0;
                    }
                    merit = Some(m1);
                    report.merit_history.push(m1.as_f64());
                    let (pc, rc) = self.fit_pressure(&cand);
                    u = cand;
                    p = pc;
                    res = rc;
                }
                None => {
                    let (mut pc, mut rc) = self.fit_pressure(&cand);
                    let mut halvings = 0;
                    while rc > res && halvings < 4 {
                        omega *= T::half();
                        cand = VelocityField::lincomb(T::one() - omega, &u, omega, &u_hat);
                        (pc, rc) = self.fit_pressure(&cand);
                        halvings += 1;
                    }
                    u = cand;
                    p = pc;
                    res = rc;
                }
            }
            if res < best.0 {
                best = (res, u.clone(), p.clone());
            }
        }

        if !converged {
            let (r, bu, bp) = best;
            u = bu;
            p = bp;
            res = r;
            report.status = match inner_failure {
                Some((stage, iters, residual)) => SolveStatus::NonConvergence {
                    stage,
                    iters,
                    residual,
                },
                None => SolveStatus::NonConvergence {
                    stage: Stage::Picard,
                    iters: tol.max_picard,
                    residual: (res / scale).as_f64(),
                },
            };
        }
        let (div, _) = self.divergence_ok(&u);
        report.momentum_residual = res.as_f64();
        report.divergence_residual = div.as_f64();
        report.velocity_h1 = v_norm(&u, grid).expect("shapes checked").as_f64();
        report.energy = self.energy(&u).as_f64();
        report.wall_time_s = start.elapsed().as_secs_f64();
        (u, p, report)
    }

    fn energy(&self, u: &VelocityField<T>) -> T {
        let gu = grad_tensor(u, self.grid).expect("shapes checked");
        energy_from_gradient(&gu, &self.params, self.g, self.grid)
    }
}

// ---------------------------------------------------------------------------
// Public stationary API
// ---------------------------------------------------------------------------

/// Solves the regularized problem from a zero initial guess.
pub fn solve_regularized<T: Real>(problem: &StationaryProblem<T>) -> Result<StationarySolution<T>> {
    let zero_u = VelocityField::zeros(&problem.grid);
    let zero_p = ScalarCellField::zeros(&problem.grid);
    solve_regularized_from(problem, &zero_u, &zero_p)
}

/// Solves the regularized problem starting from `(u0, p0)`. Non-convergence is
/// reported in `report.status`; the best iterate is still returned.
pub fn solve_regularized_from<T: Real>(
    problem: &StationaryProblem<T>,
    u0: &VelocityField<T>,
    p0: &ScalarCellField<T>,
) -> Result<StationarySolution<T>> {
    problem.grid.check(u0.nx(), u0.ny())?;
    problem.grid.check(p0.nx(), p0.ny())?;
    let poisson = NeumannPoisson::new(&problem.grid);
    let system = NonlinearSystem {
        grid: &problem.grid,
        poisson: &poisson,
        params: problem.params,
        g: &problem.g,
        f: &problem.f,
        terms: StepTerms {
            mass: T::zero(),
            u_prev: None,
            convection: None,
        },
        tol: &problem.tol,
    };
    let (u, p, report) = system.solve(u0, p0);
    if let Some(e) = report.error() {
        log::warn!("stationary solve at eps = {}: {e}", report.epsilon);
    }
    Ok(StationarySolution { u, p, report })
}

#[derive(Debug, Clone)]
pub struct EpsEntry<T> {
    pub epsilon: T,
    pub u: VelocityField<T>,
    pub p: ScalarCellField<T>,
    pub report: SolveReport,
}

/// One row of the pairwise regularization-rate check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpsRateRow {
    pub eps_i: f64,
    pub eps_j: f64,
    pub dist_sq: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct EpsStudy<T> {
    pub entries: Vec<EpsEntry<T>>,
    /// `D(i, j) = |U_i - U_j|^2_{H^1}`.
    pub distance: Vec<Vec<T>>,
    pub g_l1: T,
    nu: T,
    tol_picard: T,
    f_norm: T,
}

impl<T: Real> EpsStudy<T> {
    pub fn all_converged(&self) -> bool {
        self.entries.iter().all(|e| e.report.converged())
    }

    /// Bound for `D(i, j)`: `1.1 |eps_i - eps_j| ||g||_{L^1,h} / nu` plus a
    /// solver-tolerance slack.
    pub fn rate_bound(&self, i: usize, j: usize) -> T {
        let (a, b) = (&self.entries[i], &self.entries[j]);
        let de = (a.epsilon - b.epsilon).abs();
        let norms = T::lit(a.report.velocity_h1) + T::lit(b.report.velocity_h1);
        T::lit(1.1) * de * self.g_l1 / self.nu
            + T::lit(10.0) * self.tol_picard * self.f_norm * norms
    }

    /// All pairs `i < j`.
    pub fn rate_table(&self) -> Vec<EpsRateRow> {
        let n = self.entries.len();
        let mut rows = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let bound = self.rate_bound(i, j);
                let dist = self.distance[i][j];
                rows.push(EpsRateRow {
                    eps_i: self.entries[i].epsilon.as_f64(),
                    eps_j: self.entries[j].epsilon.as_f64(),
                    dist_sq: dist.as_f64(),
                    bound: bound.as_f64(),
                    pass: dist <= bound,
                });
            }
        }
        rows
    }
}

/// Solves at each `eps` in a strictly decreasing list, warm-starting every
/// solve from the previous solution.
pub fn eps_continuation<T: Real>(
    problem: &StationaryProblem<T>,
    eps_list: &[T],
) -> Result<EpsStudy<T>> {
    if eps_list.is_empty() {
        return Err(BinghamError::invariant("eps_list", "must not be empty"));
    }
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(BinghamError::invariant(
            "eps_list",
            "must be strictly decreasing",
        ));
    }
    let grid = &problem.grid;
    let mut entries: Vec<EpsEntry<T>> = Vec::with_capacity(eps_list.len());
    let mut u = VelocityField::zeros(grid);
    let mut p = ScalarCellField::zeros(grid);
    for &eps in eps_list {
        let sub = problem.with_epsilon(eps)?;
        let sol = solve_regularized_from(&sub, &u, &p)?;
        log::info!(
            "eps = {eps:e}: {} Picard, {} Uzawa, {} CG iterations",
            sol.report.picard_iters,
            sol.report.uzawa_iters_total,
            sol.report.cg_iters_total
        );
        u = sol.u.clone();
        p = sol.p.clone();
        entries.push(EpsEntry {
            epsilon: eps,
            u: sol.u,
            p: sol.p,
            report: sol.report,
        });
    }
    let n = entries.len();
    let mut distance = vec![vec![T::zero(); n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let h = h1_semi(&entries[i].u.sub(&entries[j].u), grid)?;
            distance[i][j] = h * h;
            distance[j][i] = h * h;
        }
    }
    Ok(EpsStudy {
        entries,
        distance,
        g_l1: problem.g.l1_norm(grid),
        nu: problem.params.nu(),
        tol_picard: problem.tol.tol_picard,
        f_norm: problem.f.l2_norm(grid),
    })
}

/// `(eps, |U_eps|_{H^2,h})` for every entry of a continuation study.
pub fn h2_diagnostic<T: Real>(study: &EpsStudy<T>, grid: &Grid<T>) -> Result<Vec<(T, T)>> {
    study
        .entries
        .iter()
        .map(|e| Ok((e.epsilon, h2_semi(&e.u, grid)?)))
        .collect()
}

/// Outcome of the a-posteriori variational inequality audit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViAudit<T> {
    pub min_slack: T,
    /// Largest `||v - U||_{H^1,h}` over the tested fields.
    pub max_distance: T,
    pub samples: usize,
}

/// Random discretely solenoidal slip field with unit `H^1` norm: the curl of
/// a corner stream function made of a few random low-frequency sine modes.
fn random_solenoidal<T: Real>(grid: &Grid<T>, rng: &mut ChaCha8Rng) -> VelocityField<T> {
    let (nx, ny) = (grid.nx(), grid.ny());
    let modes: Vec<(f64, f64, f64)> = (0..6)
        .map(|_| {
            (
                rng.gen_range(1..=4) as f64,
                rng.gen_range(1..=4) as f64,
                rng.gen_range(-1.0..1.0),
            )
        })
        .collect();
    let mut psi = vec![T::zero(); (nx + 1) * (ny + 1)];
    for j in 0..=ny {
        for i in 0..=nx {
            let sx = i as f64 / nx as f64;
            let sy = j as f64 / ny as f64;
            let noise: f64 = rng.gen_range(-0.05..0.05);
            let v: f64 = modes
                .iter()
                .map(|&(kx, ky, c)| {
                    c * (std::f64::consts::PI * kx * sx).sin()
                        * (std::f64::consts::PI * ky * sy).sin()
                })
                .sum::<f64>()
                + noise * (std::f64::consts::PI * sx).sin() * (std::f64::consts::PI * sy).sin();
            psi[j * (nx + 1) + i] = T::lit(v);
        }
    }
    let v = VelocityField::from_stream_function(grid, &psi).expect("sized stream function");
    let n = v_norm(&v, grid).expect("shapes match");
    if n > T::zero() {
        v.scaled(n.recip())
    } else {
        v
    }
}

/// Minimum over test fields `v` of
/// `nu (grad U, grad(v - U)) + (g, |grad v| - |grad U|) - (f, v - U)`.
///
/// The samples are `v = U` and `v = 0`, then random solenoidal fields of norm
/// `{0.1, 1, 10} ||U||_{H^1}` alternating with perturbations `U + w` of the same
/// sizes.
pub fn vi_residual_audit<T: Real>(
    u: &VelocityField<T>,
    problem: &StationaryProblem<T>,
    n_samples: usize,
    seed: u64,
) -> Result<ViAudit<T>> {
    let grid = &problem.grid;
    grid.check(u.nx(), u.ny())?;
    let nu = problem.params.nu();
    let g = problem.g.field();
    let gu = grad_tensor(u, grid)?;
    let abs_sum = |t: &TensorCellField<T>| -> T {
        let s: T = (0..t.n_cells())
            .map(|c| g.values()[c] * t.norm_sq_at(c).sqrt())
            .sum();
        s * grid.cell_area()
    };
    let yield_u = abs_sum(&gu);
    let slack = |v: &VelocityField<T>| -> Result<(T, T)> {
        let gv = grad_tensor(v, grid)?;
        let d = v.sub(u);
        let mut gd = gv.clone();
        for c in 0..gd.n_cells() {
            let (a, b) = (gv.at_index(c), gu.at_index(c));
            gd.set_index(
                c,
                [
                    [a[0][0] - b[0][0], a[0][1] - b[0][1]],
                    [a[1][0] - b[1][0], a[1][1] - b[1][1]],
                ],
            );
        }
        let s = nu * inner_tensor(&gu, &gd, grid) + abs_sum(&gv)
            - yield_u
            - inner_velocity(&problem.f, &d, grid);
        Ok((s, v_norm(&d, grid)?))
    };
    let (mut min_slack, mut max_distance) = slack(u)?;
    let mut samples = 1;
    let mut consider = |v: &VelocityField<T>, samples: &mut usize| -> Result<()> {
        let (s, d) = slack(v)?;
        min_slack = min_slack.min(s);
        max_distance = max_distance.max(d);
        *samples += 1;
        Ok(())
    };
    consider(&VelocityField::zeros(grid), &mut samples)?;
    let base = v_norm(u, grid)?.max(T::min_positive_value());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factors = [T::lit(0.1), T::one(), T::lit(10.0)];
    for k in 0..n_samples.saturating_sub(2) {
        let w = random_solenoidal(grid, &mut rng).scaled(factors[k % 3] * base);
        let v = if (k / 3) % 2 == 0 { w } else { u.add(&w) };
        consider(&v, &mut samples)?;
    }
    Ok(ViAudit {
        min_slack,
        max_distance,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::bump;

    fn tg_problem(n: usize, g0: f64, eps: f64) -> StationaryProblem<f64> {
        let pi = std::f64::consts::PI;
        let grid = Grid::square(pi, n).unwrap();
        let f = VelocityField::from_fn(
            &grid,
            |x, y| 2.0 * x.sin() * y.cos() - x.sin() * y.cos(),
            |x, y| -2.0 * x.cos() * y.sin() - x.cos() * y.sin(),
        );
        let g = ScalarCellField::from_fn(&grid, |x, y| g0 * bump(0.5, pi - 0.5, x, y));
        StationaryProblem::new(
            grid,
            PhysicsParams::new(1.0, eps).unwrap(),
            f,
            YieldField::new(g, true).unwrap(),
            SolverTolerances::default(),
        )
        .unwrap()
    }

    #[test]
    fn zero_forcing_gives_zero_solution() {
        let mut pr = tg_problem(8, 1.0, 0.1);
        pr.f = VelocityField::zeros(&pr.grid);
        let sol = solve_regularized(&pr).unwrap();
        assert!(sol.report.converged());
        assert_eq!(sol.u.linf_norm(), 0.0);
        assert_eq!(sol.p.linf_norm(), 0.0);
    }

    #[test]
    fn stokes_limit_is_second_order() {
        let pi = std::f64::consts::PI;
        let err = |n: usize| {
            let pr = tg_problem(n, 0.0, 0.1);
            let sol = solve_regularized(&pr).unwrap();
            assert!(sol.report.converged(), "{:?}", sol.report.status);
            let exact = VelocityField::from_fn(
                pr.grid(),
                |x, y| x.sin() * y.cos(),
                |x, y| -x.cos() * y.sin(),
            );
            let _ = pi;
            sol.u.sub(&exact).l2_norm(pr.grid())
        };
        let (e8, e16) = (err(8), err(16));
        assert!(e8 / e16 > 3.0, "{e8} {e16}");
    }

    #[test]
    fn odd_symmetry_and_pressure_mean() {
        let pr = tg_problem(8, 2.0, 0.05);
        let a = solve_regularized(&pr).unwrap();
        let b = solve_regularized(&pr.with_forcing(pr.forcing().scaled(-1.0)).unwrap()).unwrap();
        assert!(a.report.converged());
        assert_eq!(a.u, b.u.scaled(-1.0));
        assert!(a.p.mean().abs() <= 1e-13 * a.p.linf_norm());
        for w in a.report.merit_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-10 * w[0].abs());
        }
    }

    #[test]
    fn tolerances_validated() {
        let t = SolverTolerances {
            tol_picard: 0.5,
            ..SolverTolerances::<f64>::default()
        };
        assert!(t.validate().is_err());
        let t = SolverTolerances {
            max_cg: 0,
            ..SolverTolerances::<f64>::default()
        };
        assert!(t.validate().is_err());
    }

    #[test]
    fn eps_list_must_descend() {
        let pr = tg_problem(8, 1.0, 0.1);
        assert!(eps_continuation(&pr, &[0.01, 0.1]).is_err());
        let s = eps_continuation(&pr, &[0.1]).unwrap();
        assert_eq!(s.distance, vec![vec![0.0]]);
    }
}
