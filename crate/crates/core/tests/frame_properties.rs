use bingham::frame::{
    check_matrix_identities, frame_matrices, frame_transfer, psi_map, random_polynomial,
    tangency_residuals, tangential_components_residual, Direction, HeightFunction,
    PolynomialHeight,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn height(d: usize, seed: u64) -> PolynomialHeight<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_polynomial(d, 4, &mut rng).unwrap()
}

fn point(d: usize, a: f64, b: f64) -> Vec<f64> {
    if d == 2 {
        vec![a]
    } else {
        vec![a, b]
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn pointwise_identities_hold(
        seed in any::<u64>(), d in 2usize..=3, a in -1.0f64..1.0, b in -1.0f64..1.0,
    ) {
        let rho = height(d, seed);
        let yp = point(d, a, b);
        prop_assert!(check_matrix_identities(&rho, &yp).max_residual() <= 1e-11);
    }

    #[test]
    fn transfer_round_trips(
        seed in any::<u64>(), d in 2usize..=3, a in -1.0f64..1.0, b in -1.0f64..1.0,
        v in prop::collection::vec(-5.0f64..5.0, 3),
    ) {
        let rho = height(d, seed);
        let yp = point(d, a, b);
        let under = frame_transfer(&v[..d], &rho, &yp, Direction::ToUnderline).unwrap();
        let back = frame_transfer(&under[..d], &rho, &yp, Direction::FromUnderline).unwrap();
        for k in 0..d {
            prop_assert!((back[k] - v[k]).abs() <= 1e-11 * (1.0 + v[k].abs()));
        }
    }

    #[test]
    fn tangent_vectors_map_to_flat_tangents(
        seed in any::<u64>(), d in 2usize..=3, a in -1.0f64..1.0, b in -1.0f64..1.0,
        v in prop::collection::vec(-5.0f64..5.0, 3), w in prop::collection::vec(-5.0f64..5.0, 3),
    ) {
        let rho = height(d, seed);
        let yp = point(d, a, b);
        let (fwd, bwd) = tangency_residuals(&rho, &yp, &v[..d], &w[..d]);
        prop_assert!(fwd <= 1e-12 && bwd <= 1e-12, "{} {}", fwd, bwd);
        prop_assert!(tangential_components_residual(&rho, &yp, &v[..d]) <= 1e-11);
    }

    #[test]
    fn chart_sends_the_flat_boundary_to_the_graph(
        seed in any::<u64>(), d in 2usize..=3, a in -1.0f64..1.0, b in -1.0f64..1.0,
    ) {
        let rho = height(d, seed);
        let mut y = point(d, a, b);
        y.push(0.0);
        let x = psi_map(&rho, &y).unwrap();
        prop_assert!((x[d - 1] - rho.value(&y[..d - 1])).abs() <= 1e-14);
        for k in 0..d - 1 {
            prop_assert_eq!(x[k], y[k]);
        }
    }
}

#[test]
fn linear_height_gives_constant_matrices() {
    let rho = PolynomialHeight::<f64>::new(3, vec![(1, 0, 0.4), (0, 1, -0.7)]).unwrap();
    let a = frame_matrices(&rho, &[0.0, 0.0]);
    for yp in [[0.3, -0.2], [-0.9, 0.8], [2.0, 5.0]] {
        let b = frame_matrices(&rho, &yp);
        for i in 0..3 {
            for j in 0..3 {
                assert!((a.psi[i][j] - b.psi[i][j]).abs() <= 1e-15);
                assert!((a.phi[i][j] - b.phi[i][j]).abs() <= 1e-15);
            }
        }
    }
}

#[test]
fn unit_slope_normal_maps_to_scaled_flat_normal() {
    // rho(x) = x: N = (-1, 1) / sqrt 2 and Phi N = (0, -1 / sqrt 2), since the
    // flattened normal points in the -y_d direction
    let rho = PolynomialHeight::<f64>::univariate(&[0.0, 1.0]).unwrap();
    let fm = frame_matrices(&rho, &[0.25]);
    let s = 2.0f64.sqrt();
    assert!((fm.scale - s).abs() <= 1e-15);
    let n = fm.normal();
    assert!((n[0] + 1.0 / s).abs() <= 1e-15 && (n[1] - 1.0 / s).abs() <= 1e-15);
    let under = frame_transfer(&n[..2], &rho, &[0.25], Direction::ToUnderline).unwrap();
    assert!(under[0].abs() <= 1e-15, "{under:?}");
    assert!((under[1] + 1.0 / s).abs() <= 1e-15, "{under:?}");
}
