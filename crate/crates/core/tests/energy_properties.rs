use std::cell::RefCell;

use bingham::energy::{energy_j, grad_j, multiplier_lambda, PhysicsParams, YieldField};
use bingham::grid::{h1_semi, inner_velocity, Grid, ScalarCellField, VelocityField};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Case {
    grid: Grid<f64>,
    params: PhysicsParams<f64>,
    g: YieldField<f64>,
    rng: RefCell<ChaCha8Rng>,
}

impl Case {
    fn new(seed: u64, nx: usize, ny: usize, nu: f64, eps: f64) -> Self {
        let grid = Grid::new(1.0, 0.7, nx, ny).unwrap();
        let rng = RefCell::new(ChaCha8Rng::seed_from_u64(seed));
        let g = ScalarCellField::from_fn(&grid, |_, _| rng.borrow_mut().gen_range(0.0..3.0));
        Case {
            params: PhysicsParams::new(nu, eps).unwrap(),
            g: YieldField::new(g, false).unwrap(),
            grid,
            rng,
        }
    }

    fn field(&self, amp: f64) -> VelocityField<f64> {
        let mut u = VelocityField::from_fn(
            &self.grid,
            |_, _| amp * self.rng.borrow_mut().gen_range(-1.0..1.0),
            |_, _| amp * self.rng.borrow_mut().gen_range(-1.0..1.0),
        );
        u.enforce_slip_normal();
        u
    }

    fn j(&self, u: &VelocityField<f64>) -> f64 {
        energy_j(u, &self.params, &self.g, &self.grid).unwrap()
    }

    fn dj(&self, u: &VelocityField<f64>) -> VelocityField<f64> {
        grad_j(u, &self.params, &self.g, &self.grid).unwrap()
    }
}

fn eps_strategy() -> impl Strategy<Value = f64> {
    prop_oneof![Just(1e-1), Just(1e-2), Just(1e-3)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradient_matches_central_difference(
        seed in any::<u64>(), nx in 4usize..12, ny in 4usize..12,
        nu in 0.1f64..3.0, eps in eps_strategy(),
    ) {
        let c = Case::new(seed, nx, ny, nu, eps);
        let (u, w) = (c.field(1.0), c.field(1.0));
        let exact = inner_velocity(&c.dj(&u), &w, &c.grid);
        let s = 1e-6;
        let fd = (c.j(&u.add(&w.scaled(s))) - c.j(&u.sub(&w.scaled(s)))) / (2.0 * s);
        prop_assert!((fd - exact).abs() <= 1e-5 * exact.abs().max(1e-8), "{} vs {}", fd, exact);
    }

    #[test]
    fn gradient_is_monotone(
        seed in any::<u64>(), nu in 0.1f64..3.0, eps in eps_strategy(), amp in 1e-3f64..10.0,
    ) {
        let c = Case::new(seed, 8, 6, nu, eps);
        let (u, v) = (c.field(amp), c.field(amp));
        let m = inner_velocity(&c.dj(&u).sub(&c.dj(&v)), &u.sub(&v), &c.grid);
        // strong monotonicity with constant nu in the gradient seminorm
        let d = h1_semi(&u.sub(&v), &c.grid).unwrap();
        prop_assert!(m >= nu * d * d * (1.0 - 1e-10), "{} < {}", m, nu * d * d);
    }

    #[test]
    fn energy_is_convex_along_segments(
        seed in any::<u64>(), nu in 0.1f64..3.0, eps in eps_strategy(), theta in 0.0f64..1.0,
    ) {
        let c = Case::new(seed, 7, 9, nu, eps);
        let (u, v) = (c.field(2.0), c.field(2.0));
        let mid = VelocityField::lincomb(theta, &u, 1.0 - theta, &v);
        let chord = theta * c.j(&u) + (1.0 - theta) * c.j(&v);
        prop_assert!(c.j(&mid) <= chord + 1e-12 * chord.abs());
    }

    #[test]
    fn energy_is_coercive(
        seed in any::<u64>(), nu in 0.1f64..3.0, eps in eps_strategy(), amp in 1e-2f64..100.0,
    ) {
        let c = Case::new(seed, 6, 6, nu, eps);
        let u = c.field(amp);
        let h1 = h1_semi(&u, &c.grid).unwrap();
        prop_assert!(c.j(&u) >= 0.5 * nu * h1 * h1 * (1.0 - 1e-14));
    }

    #[test]
    fn multiplier_lies_in_the_unit_ball(
        seed in any::<u64>(), eps in eps_strategy(), amp in 1e-6f64..1e6,
    ) {
        let c = Case::new(seed, 9, 5, 1.0, eps);
        let lam = multiplier_lambda(&c.field(amp), &c.params, &c.grid).unwrap();
        for k in 0..lam.n_cells() {
            prop_assert!(lam.norm_sq_at(k).sqrt() <= 1.0 + 4.0 * f64::EPSILON);
        }
    }
}

#[test]
fn zero_yield_gradient_is_the_scaled_laplacian() {
    let c = Case::new(5, 10, 8, 0.7, 1e-2);
    let zero = YieldField::zeros(&c.grid);
    let u = c.field(1.0);
    let a = grad_j(&u, &c.params, &zero, &c.grid).unwrap();
    let b = bingham::energy::vector_laplacian(&u, &c.grid)
        .unwrap()
        .scaled(0.7);
    let diff = bingham::grid::FieldNorms::linf_norm(&a.sub(&b));
    assert!(
        diff <= 1e-12 * bingham::grid::FieldNorms::linf_norm(&b),
        "{diff}"
    );
}
