use std::f64::consts::PI;

use bingham::data::bump;
use bingham::energy::{multiplier_report, PhysicsParams, YieldField};
use bingham::grid::{grad_tensor, v_norm, Grid, ScalarCellField, VelocityField};
use bingham::stationary::{
    eps_continuation, solve_regularized, vi_residual_audit, SolverTolerances, StationaryProblem,
};

fn tg_forcing(grid: &Grid<f64>) -> VelocityField<f64> {
    VelocityField::from_fn(
        grid,
        |x, y| x.sin() * y.cos(),
        |x, y| -3.0 * x.cos() * y.sin(),
    )
}

fn problem(n: usize, g0: f64, eps: f64) -> StationaryProblem<f64> {
    let grid = Grid::square(PI, n).unwrap();
    let g = ScalarCellField::from_fn(&grid, |x, y| g0 * bump(0.5, PI - 0.5, x, y));
    StationaryProblem::new(
        grid,
        PhysicsParams::new(1.0, eps).unwrap(),
        tg_forcing(&grid),
        YieldField::new(g, true).unwrap(),
        SolverTolerances::default(),
    )
    .unwrap()
}

/// Size of the largest 4-connected set of marked cells.
fn largest_component(mark: &[bool], nx: usize, ny: usize) -> usize {
    let mut seen = vec![false; mark.len()];
    let mut best = 0;
    for start in 0..mark.len() {
        if !mark[start] || seen[start] {
            continue;
        }
        let mut stack = vec![start];
        seen[start] = true;
        let mut size = 0;
        while let Some(c) = stack.pop() {
            size += 1;
            let (i, j) = (c % nx, c / nx);
            let mut push = |n: usize| {
                if mark[n] && !seen[n] {
                    seen[n] = true;
                    stack.push(n);
                }
            };
            if i > 0 {
                push(c - 1);
            }
            if i + 1 < nx {
                push(c + 1);
            }
            if j > 0 {
                push(c - nx);
            }
            if j + 1 < ny {
                push(c + nx);
            }
        }
        best = best.max(size);
    }
    best
}

#[test]
fn large_yield_stress_produces_a_plug() {
    let eps = 1e-3;
    let free = solve_regularized(&problem(32, 0.0, eps)).unwrap();
    let pr = problem(32, 1e3, eps);
    let plug = solve_regularized(&pr).unwrap();
    assert!(plug.report.converged(), "{:?}", plug.report.status);
    let grid = pr.grid();
    assert!(v_norm(&plug.u, grid).unwrap() < v_norm(&free.u, grid).unwrap());
    let gu = grad_tensor(&plug.u, grid).unwrap();
    let rigid: Vec<bool> = (0..gu.n_cells())
        .map(|c| gu.norm_sq_at(c).sqrt() <= 10.0 * eps)
        .collect();
    assert!(largest_component(&rigid, 32, 32) >= 64);

    let m = multiplier_report(&plug.u, pr.params(), pr.yield_stress(), grid).unwrap();
    assert!(m.max_abs_lambda <= 1.0 - 1e-12);
    assert!(m.max_complementarity_gap <= 1e-4);
}

#[test]
fn merit_descends_and_pressure_has_zero_mean() {
    let pr = problem(24, 6.0, 1e-2);
    let sol = solve_regularized(&pr).unwrap();
    assert!(sol.report.converged());
    assert!(sol.report.merit_history.len() >= 2);
    for w in sol.report.merit_history.windows(2) {
        assert!(w[1] <= w[0] + 1e-10 * w[0].abs(), "{} -> {}", w[0], w[1]);
    }
    assert!(sol.p.mean().abs() <= 1e-13 * bingham::grid::FieldNorms::linf_norm(&sol.p));
}

#[test]
fn negated_forcing_negates_the_solution() {
    let pr = problem(16, 6.0, 1e-2);
    let a = solve_regularized(&pr).unwrap();
    let b = solve_regularized(&pr.with_forcing(pr.forcing().scaled(-1.0)).unwrap()).unwrap();
    assert_eq!(a.u, b.u.scaled(-1.0));
    assert_eq!(a.p, b.p.map(|v| -v));
}

#[test]
fn adjacent_regularization_levels_obey_the_rate_bound() {
    let pr = problem(24, 6.0, 0.1);
    let study = eps_continuation(&pr, &[1e-1, 5e-2, 2.5e-2, 1.25e-2]).unwrap();
    assert!(study.all_converged());
    let f_norm = bingham::grid::FieldNorms::l2_norm(pr.forcing(), pr.grid());
    for i in 0..3 {
        let d = study.distance[i][i + 1];
        let de = study.entries[i].epsilon - study.entries[i + 1].epsilon;
        // bound from adding the two variational inequalities (nu = 1)
        let norms = study.entries[i].report.velocity_h1 + study.entries[i + 1].report.velocity_h1;
        let slack = 10.0 * 1e-8 * f_norm * norms;
        assert!(
            d <= 1.1 * de * study.g_l1 + slack,
            "{d} vs {}",
            de * study.g_l1
        );
        assert!(d > 0.0);
    }
}

#[test]
fn small_eps_solution_satisfies_the_variational_inequality() {
    let pr = problem(24, 6.0, 1e-1);
    let study = eps_continuation(&pr, &[1e-1, 1e-2, 1e-3, 1e-4]).unwrap();
    let last = study.entries.last().unwrap();
    assert!(last.report.converged());
    let sub = pr.with_epsilon(1e-4).unwrap();
    let audit = vi_residual_audit(&last.u, &sub, 200, 11).unwrap();
    let grid = sub.grid();
    let allowance = 1e-4 * sub.yield_stress().l1_norm(grid)
        + 10.0
            * 1e-8
            * bingham::grid::FieldNorms::l2_norm(sub.forcing(), grid)
            * audit.max_distance;
    assert_eq!(audit.samples, 200);
    assert!(
        audit.min_slack >= -allowance,
        "{} < -{allowance}",
        audit.min_slack
    );
}

#[test]
fn zero_forcing_returns_zeros() {
    let mut pr = problem(8, 3.0, 1e-2);
    pr = pr.with_forcing(VelocityField::zeros(pr.grid())).unwrap();
    let sol = solve_regularized(&pr).unwrap();
    assert!(sol.report.converged());
    assert_eq!(bingham::grid::FieldNorms::linf_norm(&sol.u), 0.0);
}
