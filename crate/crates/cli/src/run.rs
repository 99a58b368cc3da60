//! Mode drivers: build the problem from a configuration, solve, and write
//! artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use bingham::data::{ScalarData, SpaceTimeFn, VectorData};
use bingham::energy::{multiplier_report, PhysicsParams, YieldField};
use bingham::evolution::{evolve, tstar_estimate, EvolutionProblem};
use bingham::frame::{check_frame_seeded, HeightFunction, PolynomialHeight, SampledHeight};
use bingham::grid::{grad_p, h1_semi, h2_semi, FieldNorms, Grid, ScalarCellField, VelocityField};
use bingham::io::{write_scalar_csv, write_velocity_csv};
use bingham::stationary::{
    eps_continuation, solve_regularized, vi_residual_audit, SolveStatus, SolverTolerances,
    StationaryProblem, StationarySolution,
};
use serde_json::{json, Value};

use crate::config::{parse, Height, Mode, RunConfig};
use crate::error::CliError;
use crate::expr::ExprFn;

/// What a finished run produced.
#[derive(Debug)]
pub struct Outcome {
    /// `false` when a solve stopped early or a check failed; artifacts are
    /// still written.
    pub success: bool,
    pub artifacts: Vec<PathBuf>,
}

struct Writer {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Writer {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn file(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.written.push(path);
        Ok(())
    }

    fn json(&mut self, name: &str, value: &Value) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("json values serialize");
        text.push('\n');
        self.file(name, text.as_bytes())
    }

    fn velocity(
        &mut self,
        name: &str,
        u: &VelocityField<f64>,
        grid: &Grid<f64>,
    ) -> Result<(), CliError> {
        let mut buf = Vec::new();
        write_velocity_csv(&mut buf, u, grid).map_err(|e| CliError::io(self.dir.join(name), e))?;
        self.file(name, &buf)
    }

    fn scalar(
        &mut self,
        name: &str,
        p: &ScalarCellField<f64>,
        grid: &Grid<f64>,
    ) -> Result<(), CliError> {
        let mut buf = Vec::new();
        write_scalar_csv(&mut buf, p, grid).map_err(|e| CliError::io(self.dir.join(name), e))?;
        self.file(name, &buf)
    }

    fn finish(self, success: bool) -> Outcome {
        Outcome {
            success,
            artifacts: self.written,
        }
    }
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn expr_fn(field: &str, src: &str) -> Result<Arc<dyn SpaceTimeFn<f64>>, CliError> {
    Ok(Arc::new(ExprFn::new(parse(field, src)?)))
}

fn vector_data(field: &str, pair: &[String; 2]) -> Result<VectorData<f64>, CliError> {
    Ok(VectorData::Function([
        expr_fn(&format!("{field}[0]"), &pair[0])?,
        expr_fn(&format!("{field}[1]"), &pair[1])?,
    ]))
}

fn scalar_data(field: &str, src: &str) -> Result<ScalarData<f64>, CliError> {
    Ok(ScalarData::Function(expr_fn(field, src)?))
}

fn grid_with(cfg: &RunConfig, nx: usize, ny: usize) -> Result<Grid<f64>, CliError> {
    let d = cfg.domain()?;
    Ok(Grid::new(
        d.lx.value("domain.lx")?,
        d.ly.value("domain.ly")?,
        nx,
        ny,
    )?)
}

fn grid(cfg: &RunConfig) -> Result<Grid<f64>, CliError> {
    let d = cfg.domain()?;
    grid_with(cfg, d.nx, d.ny)
}

fn params(cfg: &RunConfig) -> Result<PhysicsParams<f64>, CliError> {
    let p = cfg.physics()?;
    Ok(PhysicsParams::new(p.nu, p.epsilon)?)
}

fn tolerances(cfg: &RunConfig) -> Result<SolverTolerances<f64>, CliError> {
    let s = &cfg.solver;
    let d = SolverTolerances::default();
    let tol = SolverTolerances {
        tol_picard: s.tol_picard.unwrap_or(d.tol_picard),
        tol_uzawa: s.tol_uzawa.unwrap_or(d.tol_uzawa),
        tol_cg: s.tol_cg.unwrap_or(d.tol_cg),
        max_picard: s.max_picard.unwrap_or(d.max_picard),
        max_uzawa: s.max_uzawa.unwrap_or(d.max_uzawa),
        max_cg: s.max_cg.unwrap_or(d.max_cg),
    };
    tol.validate()?;
    Ok(tol)
}

fn stationary_problem(
    cfg: &RunConfig,
    grid: Grid<f64>,
) -> Result<StationaryProblem<f64>, CliError> {
    let f = vector_data("data.f", &cfg.data.f)?.sample(&grid, 0.0)?;
    let g = YieldField::new(
        scalar_data("data.g", &cfg.data.g)?.sample(&grid, 0.0)?,
        true,
    )?;
    Ok(StationaryProblem::new(
        grid,
        params(cfg)?,
        f,
        g,
        tolerances(cfg)?,
    )?)
}

/// Discrete errors against the configured analytic solution at time `t`.
fn error_table(
    cfg: &RunConfig,
    grid: &Grid<f64>,
    u: &VelocityField<f64>,
    p: Option<&ScalarCellField<f64>>,
    t: f64,
) -> Result<Option<Value>, CliError> {
    let Some(ex) = &cfg.exact else {
        return Ok(None);
    };
    let exact = vector_data("exact.u", &ex.u)?.sample(grid, t)?;
    let diff = u.sub(&exact);
    let mut table = json!({
        "velocity_l2": diff.l2_norm(grid),
        "velocity_h1_semi": h1_semi(&diff, grid)?,
        "velocity_linf": diff.linf_norm(),
    });
    if let (Some(src), Some(p)) = (&ex.p, p) {
        let mut pe = scalar_data("exact.p", src)?.sample(grid, t)?;
        pe.subtract_mean();
        let mut dp = p.clone();
        dp.subtract_mean();
        dp.axpy(-1.0, &pe);
        table["pressure_l2"] = json!(dp.l2_norm(grid));
    }
    Ok(Some(table))
}

fn solve_report_json(
    cfg: &RunConfig,
    problem: &StationaryProblem<f64>,
    sol: &StationarySolution<f64>,
) -> Result<Value, CliError> {
    let grid = problem.grid();
    let mult = multiplier_report(&sol.u, problem.params(), problem.yield_stress(), grid)?;
    let audit = vi_residual_audit(&sol.u, problem, cfg.vi_samples, cfg.seed)?;
    let allowance = problem.params().epsilon() * problem.yield_stress().l1_norm(grid)
        + 10.0
            * problem.tolerances().tol_picard
            * problem.forcing().l2_norm(grid)
            * audit.max_distance;
    // reported only: the pressure bound constant is not computable, and the
    // pressure gradient is not expected to stay bounded as eps -> 0
    let p_l2 = sol.p.l2_norm(grid);
    let data = problem.forcing().l2_norm(grid) + problem.yield_stress().field().l2_norm(grid);
    Ok(json!({
        "solve": sol.report,
        "multiplier": mult,
        "vi_audit": {
            "samples": audit.samples,
            "min_slack": audit.min_slack,
            "max_distance": audit.max_distance,
            "allowance": allowance,
            "pass": audit.min_slack >= -allowance,
        },
        "pressure": {
            "l2": p_l2,
            "grad_l2": grad_p(&sol.p, grid)?.l2_norm(grid),
            "ratio_to_data": if data > 0.0 { Some(p_l2 / data) } else { None },
        },
        "h2_semi": h2_semi(&sol.u, grid)?,
        "error_table": error_table(cfg, grid, &sol.u, Some(&sol.p), 0.0)?,
    }))
}

fn run_stationary(cfg: &RunConfig, w: &mut Writer) -> Result<bool, CliError> {
    let problem = stationary_problem(cfg, grid(cfg)?)?;
    let sol = solve_regularized(&problem)?;
    w.velocity("u.csv", &sol.u, problem.grid())?;
    w.scalar("p.csv", &sol.p, problem.grid())?;
    let mut report = solve_report_json(cfg, &problem, &sol)?;
    report["mode"] = json!(Mode::Stationary.name());
    w.json("report.json", &report)?;
    Ok(sol.report.converged())
}

fn run_evolve(cfg: &RunConfig, w: &mut Writer) -> Result<bool, CliError> {
    let grid = grid(cfg)?;
    let time = cfg.time()?;
    let u0 = vector_data("data.u0", &cfg.data.u0)?.sample(&grid, 0.0)?;
    let mut problem = EvolutionProblem::new(
        grid,
        params(cfg)?,
        vector_data("data.f", &cfg.data.f)?,
        scalar_data("data.g", &cfg.data.g)?,
        u0,
        time.t_final,
        time.n_steps,
        tolerances(cfg)?,
    )?;
    if let Some(m) = cfg.physics()?.m {
        problem = problem.with_truncation(m)?;
    }
    let out = evolve(&problem)?;

    let mut ledger = String::from(
        "k,t,u_sq,jump_sq,visc_h,yield_h,rate_sq,grad_jump_sq,grad_sq,yield_k,h2_sq,ustar_sq,\
         grad_rate_sq_h,f_sq,g_h1_sq,g_l2,g_rate,picard_iters,momentum_residual,converged\n",
    );
    for r in &out.ledger.rows {
        let vals = [
            r.t,
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
            r.f_sq,
            r.g_h1_sq,
            r.g_l2,
            r.g_rate,
        ];
        let cols: Vec<String> = vals.iter().map(|&v| num(v)).collect();
        ledger.push_str(&format!(
            "{},{},{},{},{}\n",
            r.k,
            cols.join(","),
            r.picard_iters,
            num(r.momentum_residual),
            r.converged
        ));
    }
    w.file("ledger.csv", ledger.as_bytes())?;

    let stride = time.stride.unwrap_or(time.n_steps).max(1);
    let states = out.trajectory.states();
    for (k, u) in states.iter().enumerate() {
        if k % stride == 0 || k + 1 == states.len() {
            w.velocity(&format!("trajectory/u_{k:06}.csv"), u, &grid)?;
        }
    }
    if let Some(p) = out.trajectory.pressures().last() {
        w.scalar("p_final.csv", p, &grid)?;
    }

    let tstar = tstar_estimate(&out.ledger, time.c_user, false)?;
    let tstar_2d = tstar_estimate(&out.ledger, time.c_user, true)?;
    w.json(
        "tstar.json",
        &json!({
            "c_user": time.c_user,
            "tstar": tstar,
            "tstar_two_dimensional": tstar_2d,
            "horizon": time.t_final,
        }),
    )?;

    let all_steps = out.reports.iter().all(|r| r.converged());
    let success = out.status == SolveStatus::Converged && all_steps;
    let steps: Vec<Value> = out
        .reports
        .iter()
        .enumerate()
        .map(|(k, r)| {
            json!({
                "k": k + 1,
                "picard_iters": r.picard_iters,
                "uzawa_iters_total": r.uzawa_iters_total,
                "momentum_residual": r.momentum_residual,
                "divergence_residual": r.divergence_residual,
                "status": r.status,
            })
        })
        .collect();
    let report = json!({
        "mode": Mode::Evolve.name(),
        "status": out.status,
        "steps_completed": out.reports.len(),
        "truncation_radius": problem.truncation(),
        "aggregates": out.ledger.aggregates(),
        "telescoping_defect": out.ledger.telescoping_defect(),
        "wall_time_s": out.wall_time_s,
        "error_table": error_table(
            cfg,
            &grid,
            out.trajectory.final_state(),
            None,
            out.trajectory.step_size() * out.reports.len() as f64,
        )?,
        "steps": steps,
    });
    w.json("report.json", &report)?;
    Ok(success)
}

fn run_eps_study(cfg: &RunConfig, w: &mut Writer) -> Result<bool, CliError> {
    let list = cfg
        .eps_list
        .as_ref()
        .ok_or_else(|| CliError::Config("eps_list is required for mode eps-study".into()))?;
    let problem = stationary_problem(cfg, grid(cfg)?)?;
    let study = eps_continuation(&problem, list)?;
    let mut csv = String::from("eps_i,eps_j,dist_sq,bound,pass\n");
    for r in study.rate_table() {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            num(r.eps_i),
            num(r.eps_j),
            num(r.dist_sq),
            num(r.bound),
            r.pass
        ));
    }
    w.file("eps_study.csv", csv.as_bytes())?;
    let mut entries = Vec::new();
    for (i, e) in study.entries.iter().enumerate() {
        let sub = problem.with_epsilon(e.epsilon)?;
        let sol = StationarySolution {
            u: e.u.clone(),
            p: e.p.clone(),
            report: e.report.clone(),
        };
        let mut entry = solve_report_json(cfg, &sub, &sol)?;
        entry["epsilon"] = json!(e.epsilon);
        entries.push(entry);
        w.velocity(&format!("u_eps_{i:02}.csv"), &e.u, problem.grid())?;
    }
    let rates_pass = study.rate_table().iter().all(|r| r.pass);
    let report = json!({
        "mode": Mode::EpsStudy.name(),
        "g_l1": study.g_l1,
        "rate_law_pass": rates_pass,
        "entries": entries,
    });
    w.json("report.json", &report)?;
    Ok(study.all_converged())
}

fn threads() -> Result<usize, CliError> {
    match std::env::var("BINGHAM_THREADS") {
        Err(_) => Ok(1),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::Config(format!(
                "BINGHAM_THREADS must be a positive integer, got {s:?}"
            ))),
        },
    }
}

fn run_grid_study(cfg: &RunConfig, w: &mut Writer) -> Result<bool, CliError> {
    let levels = cfg
        .levels
        .as_ref()
        .ok_or_else(|| CliError::Config("levels is required for mode grid-study".into()))?;
    if levels.is_empty() {
        return Err(CliError::Config("levels must not be empty".into()));
    }
    if levels
        .windows(2)
        .any(|p| p[1][0] < p[0][0] || p[1][1] < p[0][1])
    {
        return Err(CliError::Config(
            "levels must be refining (nx and ny non-decreasing)".into(),
        ));
    }
    let problems = levels
        .iter()
        .map(|&[nx, ny]| stationary_problem(cfg, grid_with(cfg, nx, ny)?))
        .collect::<Result<Vec<_>, _>>()?;

    // Levels are independent, so they are solved in batches of BINGHAM_THREADS.
    let batch = threads()?;
    let mut solutions = Vec::with_capacity(problems.len());
    for chunk in problems.chunks(batch) {
        let solved: Vec<_> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|pr| s.spawn(move || solve_regularized(pr)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("solver thread panicked"))
                .collect()
        });
        for sol in solved {
            solutions.push(sol?);
        }
    }

    let mut rows = Vec::new();
    for (pr, sol) in problems.iter().zip(&solutions) {
        rows.push(error_table(cfg, pr.grid(), &sol.u, Some(&sol.p), 0.0)?);
    }
    let err = |row: &Option<Value>, key: &str| row.as_ref().and_then(|r| r[key].as_f64());
    let order = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) if a > 0.0 && b > 0.0 => Some((a / b).log2()),
        (Some(a), Some(b)) if a == b => Some(0.0),
        _ => None,
    };
    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
    let mut csv = String::from(
        "nx,ny,velocity_l2,velocity_h1_semi,pressure_l2,order_velocity_l2,order_pressure_l2\n",
    );
    let mut table = Vec::new();
    for (k, (pr, row)) in problems.iter().zip(&rows).enumerate() {
        let (ul2, uh1, pl2) = (
            err(row, "velocity_l2"),
            err(row, "velocity_h1_semi"),
            err(row, "pressure_l2"),
        );
        let next = rows.get(k + 1);
        let (ou, op) = match next {
            Some(n) => (
                order(ul2, err(n, "velocity_l2")),
                order(pl2, err(n, "pressure_l2")),
            ),
            None => (None, None),
        };
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            pr.grid().nx(),
            pr.grid().ny(),
            opt(ul2),
            opt(uh1),
            opt(pl2),
            opt(ou),
            opt(op)
        ));
        table.push(json!({
            "nx": pr.grid().nx(),
            "ny": pr.grid().ny(),
            "errors": row,
            "order_velocity_l2": ou,
            "order_pressure_l2": op,
            "solve": solutions[k].report,
        }));
    }
    w.file("grid_study.csv", csv.as_bytes())?;
    for (pr, sol) in problems.iter().zip(&solutions) {
        let g = pr.grid();
        w.velocity(&format!("u_{}x{}.csv", g.nx(), g.ny()), &sol.u, g)?;
    }
    w.json(
        "report.json",
        &json!({ "mode": Mode::GridStudy.name(), "levels": table }),
    )?;
    Ok(solutions.iter().all(|s| s.report.converged()))
}

fn run_frame_check(cfg: &RunConfig, w: &mut Writer) -> Result<bool, CliError> {
    let fc = cfg.frame()?;
    let (rho, kind): (Box<dyn HeightFunction<f64>>, &str) = match &fc.rho {
        Height::Coefficients(c) => {
            if fc.d != 2 {
                return Err(CliError::Config(
                    "frame.rho as a coefficient list requires d = 2; use [a, b, c] monomials for d = 3".into(),
                ));
            }
            (Box::new(PolynomialHeight::univariate(c)?), "polynomial")
        }
        Height::Monomials(m) => (
            Box::new(PolynomialHeight::new(fc.d, m.clone())?),
            "polynomial",
        ),
        Height::Expr(src) => {
            let e = parse("frame.rho", src)?;
            let f = move |y: &[f64]| {
                e.eval(y[0], y.get(1).copied().unwrap_or(0.0), 0.0)
                    .unwrap_or(f64::NAN)
            };
            (Box::new(SampledHeight::new(fc.d, f)?), "expression")
        }
    };
    if fc.radius.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) || fc.points == 0 {
        return Err(CliError::Config(
            "frame: radius > 0 and points >= 1 required".into(),
        ));
    }
    let report = check_frame_seeded(rho.as_ref(), fc.points, fc.radius, cfg.seed);
    let tolerance = if rho.exact_derivatives() { 1e-11 } else { 1e-6 };
    let pass = report.max_residual() <= tolerance;
    w.json(
        "frame_report.json",
        &json!({
            "mode": Mode::FrameCheck.name(),
            "d": fc.d,
            "representation": kind,
            "tolerance": tolerance,
            "max_residual": report.max_residual(),
            "residuals": report,
            "pass": pass,
        }),
    )?;
    Ok(pass)
}

/// Runs the configured mode and writes artifacts into `out`.
pub fn run_config(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    cfg.check_expressions()?;
    let mut w = Writer::new(out)?;
    let success = match cfg.mode {
        Mode::Stationary => run_stationary(cfg, &mut w)?,
        Mode::Evolve => run_evolve(cfg, &mut w)?,
        Mode::EpsStudy => run_eps_study(cfg, &mut w)?,
        Mode::GridStudy => run_grid_study(cfg, &mut w)?,
        Mode::FrameCheck => run_frame_check(cfg, &mut w)?,
    };
    Ok(w.finish(success))
}
