//! Smoothed Bingham energy on the staggered grid.
//!
//! With `G_c` the cell gradient of a face field `U`, the discrete energy is
//!
//! ```text
//! J(U) = sum_c hx*hy * ( nu/2 |G_c|^2 + g_c sqrt(|G_c|^2 + eps^2) )
//! ```
//!
//! Its exact gradient (w.r.t. the face inner product) is the discrete
//! nonlinear Bingham operator. Because the operator is a true gradient of a
//! convex function, convexity and monotonicity hold exactly in finite
//! dimensions.

use crate::error::{BinghamError, Result};
use crate::grid::{
    grad_tensor, grad_tensor_into, grad_tensor_transpose, Grid, ScalarCellField, TensorCellField,
    VelocityField,
};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicsParams<T> {
    nu: T,
    epsilon: T,
}

impl<T: Real> PhysicsParams<T> {
    /// `nu > 0` and `0 < epsilon <= 1`.
    pub fn new(nu: T, epsilon: T) -> Result<Self> {
        if !(nu > T::zero()) || !nu.is_finite() {
            return Err(BinghamError::IllPosed(format!(
                "PhysicsParams invariant nu > 0 violated (nu = {nu})"
            )));
        }
        if !(epsilon > T::zero() && epsilon <= T::one()) {
            return Err(BinghamError::invariant(
                "PhysicsParams",
                format!("0 < epsilon <= 1 required, got {epsilon}"),
            ));
        }
        Ok(PhysicsParams { nu, epsilon })
    }

    pub fn nu(&self) -> T {
        self.nu
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    pub fn with_epsilon(&self, epsilon: T) -> Result<Self> {
        Self::new(self.nu, epsilon)
    }
}

/// Nonnegative cell-centered yield stress.
#[derive(Debug, Clone, PartialEq)]
pub struct YieldField<T> {
    g: ScalarCellField<T>,
}

impl<T: Real> YieldField<T> {
    /// Rejects negative entries. With `require_zero_trace`, cells touching the
    /// boundary are expected to carry zero yield stress; violations only log a
    /// warning because well-posedness needs nothing beyond `g >= 0`.
    pub fn new(g: ScalarCellField<T>, require_zero_trace: bool) -> Result<Self> {
        let nx = g.nx();
        for (c, &v) in g.values().iter().enumerate() {
            if !(v >= T::zero()) || !v.is_finite() {
                return Err(BinghamError::NegativeYield {
                    i: c % nx,
                    j: c / nx,
                    value: v.as_f64(),
                });
            }
        }
        if require_zero_trace {
            let ny = g.ny();
            let on_edge = (0..nx)
                .flat_map(|i| [(i, 0), (i, ny - 1)])
                .chain((0..ny).flat_map(|j| [(0, j), (nx - 1, j)]))
                .any(|(i, j)| g.get(i, j) != T::zero());
            if on_edge {
                log::warn!(
                    "yield stress does not vanish on boundary cells; H^2 bounds may not apply"
                );
            }
        }
        Ok(YieldField { g })
    }

    pub fn zeros(grid: &Grid<T>) -> Self {
        YieldField {
            g: ScalarCellField::zeros(grid),
        }
    }

    pub fn field(&self) -> &ScalarCellField<T> {
        &self.g
    }

    /// `||g||_{L^1,h}`
    pub fn l1_norm(&self, grid: &Grid<T>) -> T {
        self.g.values().iter().copied().sum::<T>() * grid.cell_area()
    }

    pub fn is_zero(&self) -> bool {
        self.g.values().iter().all(|&v| v == T::zero())
    }
}

fn check_inputs<T: Real>(
    u: &VelocityField<T>,
    g: Option<&YieldField<T>>,
    grid: &Grid<T>,
) -> Result<()> {
    grid.check(u.nx(), u.ny())?;
    if let Some(g) = g {
        grid.check(g.g.nx(), g.g.ny())?;
    }
    Ok(())
}

/// Discrete energy `J(U)`.
pub fn energy_j<T: Real>(
    u: &VelocityField<T>,
    params: &PhysicsParams<T>,
    g: &YieldField<T>,
    grid: &Grid<T>,
) -> Result<T> {
    check_inputs(u, Some(g), grid)?;
    let gu = grad_tensor(u, grid)?;
    Ok(energy_from_gradient(&gu, params, g, grid))
}

pub(crate) fn energy_from_gradient<T: Real>(
    gu: &TensorCellField<T>,
    params: &PhysicsParams<T>,
    g: &YieldField<T>,
    grid: &Grid<T>,
) -> T {
    let eps2 = params.epsilon * params.epsilon;
    let half_nu = T::half() * params.nu;
    let gv = g.g.values();
    let s: T = (0..gu.n_cells())
        .map(|c| {
            let n2 = gu.norm_sq_at(c);
            half_nu * n2 + gv[c] * (n2 + eps2).sqrt()
        })
        .sum();
    s * grid.cell_area()
}

/// Effective (secant) viscosity `a_c = nu + g_c / sqrt(|G_c|^2 + eps^2)`.
pub fn effective_viscosity<T: Real>(
    u: &VelocityField<T>,
    params: &PhysicsParams<T>,
    g: &YieldField<T>,
    grid: &Grid<T>,
) -> Result<ScalarCellField<T>> {
    check_inputs(u, Some(g), grid)?;
    let gu = grad_tensor(u, grid)?;
    Ok(viscosity_from_gradient(&gu, params, g))
}

pub(crate) fn viscosity_from_gradient<T: Real>(
    gu: &TensorCellField<T>,
    params: &PhysicsParams<T>,
    g: &YieldField<T>,
) -> ScalarCellField<T> {
    let eps2 = params.epsilon * params.epsilon;
    let mut a = g.g.clone();
    for (c, v) in a.values_mut().iter_mut().enumerate() {
        *v = params.nu + *v / (gu.norm_sq_at(c) + eps2).sqrt();
    }
    a
}

/// `grad^T (a grad U)`: the Riesz representative of `(a grad U, grad V)_h`.
pub(crate) fn apply_weighted<T: Real>(
    u: &VelocityField<T>,
    a: &ScalarCellField<T>,
    grid: &Grid<T>,
    scratch: &mut TensorCellField<T>,
) -> VelocityField<T> {
    grad_tensor_into(u, grid, scratch);
    scratch.scale_by(a);
    grad_tensor_transpose(scratch, grid)
}

/// Exact gradient of [`energy_j`] with respect to the interior face unknowns.
pub fn grad_j<T: Real>(
    u: &VelocityField<T>,
    params: &PhysicsParams<T>,
    g: &YieldField<T>,
    grid: &Grid<T>,
) -> Result<VelocityField<T>> {
    check_inputs(u, Some(g), grid)?;
    let mut gu = grad_tensor(u, grid)?;
    let a = viscosity_from_gradient(&gu, params, g);
    gu.scale_by(&a);
    Ok(grad_tensor_transpose(&gu, grid))
}

/// Discrete vector Laplacian `A U = grad^T grad U` (the `g = 0`, `nu = 1`
/// operator).
pub fn vector_laplacian<T: Real>(u: &VelocityField<T>, grid: &Grid<T>) -> Result<VelocityField<T>> {
    let gu = grad_tensor(u, grid)?;
    Ok(grad_tensor_transpose(&gu, grid))
}

/// Regularized multiplier `lambda_c = G_c / sqrt(|G_c|^2 + eps^2)`.
pub fn multiplier_lambda<T: Real>(
    u: &VelocityField<T>,
    params: &PhysicsParams<T>,
    grid: &Grid<T>,
) -> Result<TensorCellField<T>> {
    let mut gu = grad_tensor(u, grid)?;
    let eps2 = params.epsilon * params.epsilon;
    for c in 0..gu.n_cells() {
        let s = (gu.norm_sq_at(c) + eps2).sqrt().recip();
        let m = gu.at_index(c);
        gu.set_index(c, [[m[0][0] * s, m[0][1] * s], [m[1][0] * s, m[1][1] * s]]);
    }
    Ok(gu)
}

/// Pointwise diagnostics of the multiplier on a computed field.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MultiplierReport {
    pub max_abs_lambda: f64,
    /// Cells with `|G_c| >= 100 eps` where the complementarity identity is checked.
    pub yielded_cells: usize,
    /// max over yielded cells of `|g lambda:G - g|G|| / (g |G|)` (cells with `g = 0` skipped).
    pub max_complementarity_gap: f64,
    /// `||trace(lambda)||_inf`; reported only.
    pub max_trace: f64,
}

pub fn multiplier_report<T: Real>(
    u: &VelocityField<T>,
    params: &PhysicsParams<T>,
    g: &YieldField<T>,
    grid: &Grid<T>,
) -> Result<MultiplierReport> {
    check_inputs(u, Some(g), grid)?;
    let gu = grad_tensor(u, grid)?;
    let lam = multiplier_lambda(u, params, grid)?;
    let threshold = T::lit(100.0) * params.epsilon;
    let mut max_abs = 0.0f64;
    let mut gap = 0.0f64;
    let mut count = 0;
    for c in 0..gu.n_cells() {
        max_abs = max_abs.max(lam.norm_sq_at(c).sqrt().as_f64());
        let gn = gu.norm_sq_at(c).sqrt();
        let gc = g.g.values()[c];
        if gn >= threshold && gc > T::zero() {
            count += 1;
            let (a, b) = (lam.at_index(c), gu.at_index(c));
            let contraction =
                a[0][0] * b[0][0] + a[0][1] * b[0][1] + a[1][0] * b[1][0] + a[1][1] * b[1][1];
            let rel = ((gc * contraction - gc * gn).abs() / (gc * gn)).as_f64();
            gap = gap.max(rel);
        }
    }
    Ok(MultiplierReport {
        max_abs_lambda: max_abs,
        yielded_cells: count,
        max_complementarity_gap: gap,
        max_trace: crate::grid::FieldNorms::linf_norm(&lam.trace()).as_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{h1_semi, inner_velocity, FieldNorms};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: &Grid<f64>, rng: &mut ChaCha8Rng, amp: f64) -> VelocityField<f64> {
        let rng = std::cell::RefCell::new(rng);
        VelocityField::from_fn(
            grid,
            |_, _| amp * rng.borrow_mut().gen_range(-1.0..1.0),
            |_, _| amp * rng.borrow_mut().gen_range(-1.0..1.0),
        )
    }

    fn random_yield(grid: &Grid<f64>, rng: &mut ChaCha8Rng) -> YieldField<f64> {
        let mut g = ScalarCellField::zeros(grid);
        for v in g.values_mut() {
            *v = rng.gen_range(0.0..2.0);
        }
        YieldField::new(g, false).unwrap()
    }

    #[test]
    fn params_validate() {
        assert!(matches!(
            PhysicsParams::new(0.0, 0.1),
            Err(BinghamError::IllPosed(_))
        ));
        assert!(PhysicsParams::new(1.0, 0.0).is_err());
        assert!(PhysicsParams::new(1.0, 1.5).is_err());
        assert!(PhysicsParams::new(1.0, 1.0).is_ok());
    }

    #[test]
    fn negative_yield_rejected() {
        let grid = Grid::square(1.0, 4).unwrap();
        let mut g = ScalarCellField::zeros(&grid);
        g.set(2, 1, -0.5);
        assert!(matches!(
            YieldField::new(g, false),
            Err(BinghamError::NegativeYield { i: 2, j: 1, .. })
        ));
    }

    #[test]
    fn energy_at_zero_is_eps_times_l1() {
        let grid = Grid::square(2.0, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = random_yield(&grid, &mut rng);
        let p = PhysicsParams::new(1.3, 0.01).unwrap();
        let j = energy_j(&VelocityField::zeros(&grid), &p, &g, &grid).unwrap();
        assert!((j - 0.01 * g.l1_norm(&grid)).abs() < 1e-15);
        assert_eq!(
            grad_j(&VelocityField::zeros(&grid), &p, &g, &grid)
                .unwrap()
                .linf_norm(),
            0.0
        );
    }

    #[test]
    fn pure_viscous_energy_and_gradient() {
        let grid = Grid::new(1.0, 2.0, 8, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = random_field(&grid, &mut rng, 1.0);
        let p = PhysicsParams::new(0.7, 0.1).unwrap();
        let g = YieldField::zeros(&grid);
        let h1 = h1_semi(&u, &grid).unwrap();
        let j = energy_j(&u, &p, &g, &grid).unwrap();
        assert!((j - 0.35 * h1 * h1).abs() < 1e-12 * j);
        let gj = grad_j(&u, &p, &g, &grid).unwrap();
        let lap = vector_laplacian(&u, &grid).unwrap().scaled(0.7);
        assert!(gj.sub(&lap).linf_norm() < 1e-12 * lap.linf_norm());
    }

    #[test]
    fn effective_viscosity_cases() {
        let grid = Grid::square(1.0, 4).unwrap();
        let p = PhysicsParams::new(1.0, 0.05).unwrap();
        let g = YieldField::new(ScalarCellField::constant(&grid, 2.0), false).unwrap();
        let a = effective_viscosity(&VelocityField::zeros(&grid), &p, &g, &grid).unwrap();
        for v in a.values() {
            assert!((*v - (1.0f64 + 2.0 / 0.05)).abs() < 1e-12);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u = random_field(&grid, &mut rng, 3.0);
        let a0 = effective_viscosity(&u, &p, &YieldField::zeros(&grid), &grid).unwrap();
        assert!(a0.values().iter().all(|&v| v == 1.0));
        let a1 = effective_viscosity(&u, &p, &g, &grid).unwrap();
        assert!(a1.values().iter().all(|&v| v >= 1.0));
    }

    #[test]
    fn viscosity_and_multiplier_at_gradient_equal_to_eps() {
        // Single cell check through the gradient-level helpers.
        let grid = Grid::square(1.0, 4).unwrap();
        let eps = 0.2;
        let p = PhysicsParams::new(1.0, eps).unwrap();
        let mut gu = TensorCellField::zeros(&grid);
        gu.set_index(5, [[eps, 0.0], [0.0, 0.0]]);
        let g = YieldField::new(ScalarCellField::constant(&grid, 1.0), false).unwrap();
        let a = viscosity_from_gradient(&gu, &p, &g);
        assert!((a.values()[5] - (1.0 + 1.0 / (eps * 2f64.sqrt()))).abs() < 1e-12);
        let s = (gu.norm_sq_at(5) + eps * eps).sqrt();
        assert!((eps / s - 0.5f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn multiplier_bounded_by_one() {
        let grid = Grid::square(1.0, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for &amp in &[0.0, 1e-6, 1.0, 1e6] {
            let u = random_field(&grid, &mut rng, amp);
            let p = PhysicsParams::new(1.0, 1e-4).unwrap();
            let lam = multiplier_lambda(&u, &p, &grid).unwrap();
            for c in 0..lam.n_cells() {
                assert!(lam.norm_sq_at(c).sqrt() <= 1.0 + 4.0 * f64::EPSILON);
            }
            if amp == 0.0 {
                assert_eq!(lam.linf_norm(), 0.0);
            }
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let grid = Grid::new(1.0, 1.2, 8, 8).unwrap();
        let p = PhysicsParams::new(0.8, 0.05).unwrap();
        for _ in 0..100 {
            let u = random_field(&grid, &mut rng, 1.0);
            let v = random_field(&grid, &mut rng, 1.0);
            let g = random_yield(&grid, &mut rng);
            let delta = 1e-6 * u.l2_norm(&grid) / v.l2_norm(&grid);
            let jp = energy_j(&u.add(&v.scaled(delta)), &p, &g, &grid).unwrap();
            let jm = energy_j(&u.sub(&v.scaled(delta)), &p, &g, &grid).unwrap();
            let fd = (jp - jm) / (2.0 * delta);
            let an = inner_velocity(&grad_j(&u, &p, &g, &grid).unwrap(), &v, &grid);
            assert!((an - fd).abs() / an.abs() <= 1e-5, "{an} vs {fd}");
        }
    }

    #[test]
    fn convexity_monotonicity_and_coercivity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let grid = Grid::square(1.0, 8).unwrap();
        let p = PhysicsParams::new(1.0, 1e-3).unwrap();
        for _ in 0..100 {
            let g = random_yield(&grid, &mut rng);
            let u = random_field(&grid, &mut rng, 1.0);
            let w = random_field(&grid, &mut rng, 1.0);
            let mid = VelocityField::lincomb(0.5, &u, 0.5, &w);
            let ju = energy_j(&u, &p, &g, &grid).unwrap();
            let jw = energy_j(&w, &p, &g, &grid).unwrap();
            assert!(energy_j(&mid, &p, &g, &grid).unwrap() <= 0.5 * ju + 0.5 * jw + 1e-12);
            let d = grad_j(&u, &p, &g, &grid)
                .unwrap()
                .sub(&grad_j(&w, &p, &g, &grid).unwrap());
            assert!(inner_velocity(&d, &u.sub(&w), &grid) >= -1e-12);
            let h1 = h1_semi(&u, &grid).unwrap();
            assert!(ju >= 0.5 * h1 * h1);
        }
    }

    #[test]
    fn report_identity_on_yielded_cells() {
        let grid = Grid::square(1.0, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let u = random_field(&grid, &mut rng, 1.0);
        let g = random_yield(&grid, &mut rng);
        let p = PhysicsParams::new(1.0, 1e-4).unwrap();
        let r = multiplier_report(&u, &p, &g, &grid).unwrap();
        assert!(r.max_abs_lambda <= 1.0);
        assert!(r.yielded_cells > 0);
        assert!(r.max_complementarity_gap <= 1e-4);
    }

    #[test]
    fn single_precision_gradient() {
        let grid = Grid::<f32>::square(1.0, 6).unwrap();
        let u = VelocityField::from_fn(&grid, |x, y| (3.0 * x).sin() * y, |x, y| x * y * y);
        let v = VelocityField::from_fn(&grid, |x, _| x.cos(), |_, y| y.sin());
        let g = YieldField::new(ScalarCellField::constant(&grid, 0.5f32), false).unwrap();
        let p = PhysicsParams::new(1.0f32, 0.1).unwrap();
        let d = 1e-2f32;
        let fd = (energy_j(&u.add(&v.scaled(d)), &p, &g, &grid).unwrap()
            - energy_j(&u.sub(&v.scaled(d)), &p, &g, &grid).unwrap())
            / (2.0 * d);
        let an = inner_velocity(&grad_j(&u, &p, &g, &grid).unwrap(), &v, &grid);
        assert!((an - fd).abs() / an.abs() < 1e-2);
    }
}
