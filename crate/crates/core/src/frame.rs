//! Boundary-flattening normal transformation for a boundary written locally
//! as a graph `x_d = rho(x')`, in two or three dimensions.
//!
//! `psi(y) = (y', rho(y')) + y_d (grad' rho(y'), -1)`. At `y_d = 0` its
//! Jacobian `Psi` and the inverse `Phi` have closed forms; this module
//! evaluates them and checks the frame identities they satisfy.

use serde::Serialize;

use crate::error::{BinghamError, Result};
use crate::scalar::Real;

/// Small dense vectors and matrices (`d <= 3`).
pub type Vec3<T> = [T; 3];
pub type Mat3<T> = [[T; 3]; 3];

/// A local boundary height function `rho: R^{d-1} -> R` with `rho(0) = 0`.
pub trait HeightFunction<T: Real> {
    /// Ambient dimension `d` (2 or 3).
    fn dim(&self) -> usize;
    /// `rho(y')`; only the first `d - 1` entries of `yp` are read.
    fn value(&self, yp: &[T]) -> T;
    /// `grad' rho(y')` in the first `d - 1` entries.
    fn gradient(&self, yp: &[T]) -> Vec3<T>;
    /// Whether derivatives are exact (as opposed to finite differences).
    fn exact_derivatives(&self) -> bool {
        true
    }
}

fn check_dim(d: usize) -> Result<()> {
    if d == 2 || d == 3 {
        Ok(())
    } else {
        Err(BinghamError::invariant(
            "HeightFunction",
            format!("dimension must be 2 or 3, got {d}"),
        ))
    }
}

fn check_origin<T: Real>(rho0: T) -> Result<()> {
    if !(rho0.abs() <= T::lit(1e-12)) {
        return Err(BinghamError::invariant(
            "HeightFunction",
            format!("rho(0) = 0 required, got {rho0:e}"),
        ));
    }
    Ok(())
}

/// Polynomial height of total degree at most 4, stored as monomials
/// `c * y1^a * y2^b` (`b = 0` when `d = 2`).
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialHeight<T> {
    d: usize,
    terms: Vec<(usize, usize, T)>,
}

impl<T: Real> PolynomialHeight<T> {
    pub const MAX_DEGREE: usize = 4;

    pub fn new(d: usize, terms: Vec<(usize, usize, T)>) -> Result<Self> {
        check_dim(d)?;
        for &(a, b, c) in &terms {
            if a + b > Self::MAX_DEGREE {
                return Err(BinghamError::invariant(
                    "HeightFunction",
                    format!("total degree {} exceeds {}", a + b, Self::MAX_DEGREE),
                ));
            }
            if d == 2 && b != 0 {
                return Err(BinghamError::invariant(
                    "HeightFunction",
                    "a curve (d = 2) depends on y1 only",
                ));
            }
            if !c.is_finite() {
                return Err(BinghamError::invariant(
                    "HeightFunction",
                    "non-finite coefficient",
                ));
            }
        }
        let p = PolynomialHeight { d, terms };
        check_origin(p.value(&[T::zero(), T::zero()]))?;
        Ok(p)
    }

    /// `rho(y1) = sum_k coeffs[k] y1^k` for a curve in the plane.
    pub fn univariate(coeffs: &[T]) -> Result<Self> {
        Self::new(
            2,
            coeffs.iter().enumerate().map(|(k, &c)| (k, 0, c)).collect(),
        )
    }

    /// The flat boundary `rho = 0`.
    pub fn flat(d: usize) -> Result<Self> {
        Self::new(d, Vec::new())
    }

    pub fn terms(&self) -> &[(usize, usize, T)] {
        &self.terms
    }
}

fn powi<T: Real>(x: T, n: usize) -> T {
    (0..n).fold(T::one(), |acc, _| acc * x)
}

impl<T: Real> HeightFunction<T> for PolynomialHeight<T> {
    fn dim(&self) -> usize {
        self.d
    }

    fn value(&self, yp: &[T]) -> T {
        let y2 = if self.d == 3 { yp[1] } else { T::zero() };
        self.terms
            .iter()
            .map(|&(a, b, c)| c * powi(yp[0], a) * powi(y2, b))
            .sum()
    }

    fn gradient(&self, yp: &[T]) -> Vec3<T> {
        let y2 = if self.d == 3 { yp[1] } else { T::zero() };
        let mut g = [T::zero(); 3];
        for &(a, b, c) in &self.terms {
            if a > 0 {
                g[0] += c * T::from_count(a) * powi(yp[0], a - 1) * powi(y2, b);
            }
            if b > 0 {
                g[1] += c * T::from_count(b) * powi(yp[0], a) * powi(y2, b - 1);
            }
        }
        g
    }
}

/// Height given by an arbitrary function; derivatives by central differences
/// with step `1e-6`.
pub struct SampledHeight<F> {
    d: usize,
    f: F,
}

/// Central-difference step used by [`SampledHeight`].
pub const SAMPLED_STEP: f64 = 1e-6;

impl<F> SampledHeight<F> {
    pub fn new<T: Real>(d: usize, f: F) -> Result<Self>
    where
        F: Fn(&[T]) -> T,
    {
        check_dim(d)?;
        check_origin(f(&[T::zero(), T::zero()]))?;
        Ok(SampledHeight { d, f })
    }
}

impl<T: Real, F: Fn(&[T]) -> T> HeightFunction<T> for SampledHeight<F> {
    fn dim(&self) -> usize {
        self.d
    }

    fn value(&self, yp: &[T]) -> T {
        (self.f)(yp)
    }

    fn gradient(&self, yp: &[T]) -> Vec3<T> {
        let h = T::lit(SAMPLED_STEP);
        let mut g = [T::zero(); 3];
        for (k, gk) in g.iter_mut().enumerate().take(self.d - 1) {
            let mut plus = [yp[0], if self.d == 3 { yp[1] } else { T::zero() }];
            let mut minus = plus;
            plus[k] += h;
            minus[k] -= h;
            *gk = ((self.f)(&plus) - (self.f)(&minus)) / (T::two() * h);
        }
        g
    }

    fn exact_derivatives(&self) -> bool {
        false
    }
}

/// `Psi`, `Phi = Psi^{-1}` (from the closed form) and related quantities at
/// a boundary point `(y', 0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameMatrices<T> {
    pub d: usize,
    pub psi: Mat3<T>,
    pub phi: Mat3<T>,
    pub grad_rho: Vec3<T>,
    /// `sqrt(|grad' rho|^2 + 1)`
    pub scale: T,
}

impl<T: Real> FrameMatrices<T> {
    /// Unit outer normal `N = (-grad' rho, 1) / scale`.
    pub fn normal(&self) -> Vec3<T> {
        let mut n = [T::zero(); 3];
        for k in 0..self.d - 1 {
            n[k] = -self.grad_rho[k] / self.scale;
        }
        n[self.d - 1] = self.scale.recip();
        n
    }

    /// `(0, ..., 0, -1)`
    pub fn flat_normal(&self) -> Vec3<T> {
        let mut n = [T::zero(); 3];
        n[self.d - 1] = -T::one();
        n
    }
}

pub fn psi_map<T: Real>(rho: &dyn HeightFunction<T>, y: &[T]) -> Result<Vec3<T>> {
    let d = rho.dim();
    if y.len() != d {
        return Err(BinghamError::DimensionMismatch {
            expected: format!("{d} coordinates"),
            found: y.len().to_string(),
        });
    }
    let g = rho.gradient(y);
    let yd = y[d - 1];
    let mut x = [T::zero(); 3];
    for k in 0..d - 1 {
        x[k] = y[k] + yd * g[k];
    }
    x[d - 1] = rho.value(y) - yd;
    Ok(x)
}

pub fn frame_matrices<T: Real>(rho: &dyn HeightFunction<T>, yp: &[T]) -> FrameMatrices<T> {
    let d = rho.dim();
    let g = rho.gradient(yp);
    let g2: T = g.iter().take(d - 1).map(|&v| v * v).sum();
    let s2 = g2 + T::one();
    let mut psi = [[T::zero(); 3]; 3];
    let mut phi = [[T::zero(); 3]; 3];
    for i in 0..d - 1 {
        for j in 0..d - 1 {
            let delta = if i == j { T::one() } else { T::zero() };
            psi[i][j] = delta;
            phi[i][j] = (s2 * delta - g[i] * g[j]) / s2;
        }
        psi[i][d - 1] = g[i];
        psi[d - 1][i] = g[i];
        phi[i][d - 1] = g[i] / s2;
        phi[d - 1][i] = g[i] / s2;
    }
    psi[d - 1][d - 1] = -T::one();
    phi[d - 1][d - 1] = -s2.recip();
    FrameMatrices {
        d,
        psi,
        phi,
        grad_rho: g,
        scale: s2.sqrt(),
    }
}

fn mat_vec<T: Real>(m: &Mat3<T>, v: &Vec3<T>, d: usize) -> Vec3<T> {
    let mut out = [T::zero(); 3];
    for i in 0..d {
        for j in 0..d {
            out[i] += m[i][j] * v[j];
        }
    }
    out
}

fn max_abs_diff<T: Real>(a: &Vec3<T>, b: &Vec3<T>, d: usize) -> T {
    (0..d).fold(T::zero(), |m, k| m.max((a[k] - b[k]).abs()))
}

fn dot<T: Real>(a: &Vec3<T>, b: &Vec3<T>, d: usize) -> T {
    (0..d).map(|k| a[k] * b[k]).sum()
}

fn norm<T: Real>(a: &Vec3<T>, d: usize) -> T {
    dot(a, a, d).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `v -> Phi v`
    ToUnderline,
    /// `v -> Psi v`
    FromUnderline,
}

pub fn frame_transfer<T: Real>(
    v: &[T],
    rho: &dyn HeightFunction<T>,
    yp: &[T],
    direction: Direction,
) -> Result<Vec3<T>> {
    let d = rho.dim();
    if v.len() != d {
        return Err(BinghamError::DimensionMismatch {
            expected: format!("{d} components"),
            found: v.len().to_string(),
        });
    }
    let fm = frame_matrices(rho, yp);
    let mut w = [T::zero(); 3];
    w[..d].copy_from_slice(v);
    Ok(match direction {
        Direction::ToUnderline => mat_vec(&fm.phi, &w, d),
        Direction::FromUnderline => mat_vec(&fm.psi, &w, d),
    })
}

/// Residuals of the pointwise frame identities at one boundary point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatrixIdentityReport {
    /// `max |Psi Phi - I|`
    pub inverse: f64,
    /// `max |Psi - Psi^T|`
    pub symmetry: f64,
    /// `|Phi N - n_flat / scale|`
    pub phi_normal: f64,
    /// `|Psi N - scale n_flat|`
    pub psi_normal: f64,
}

impl MatrixIdentityReport {
    pub fn max_residual(&self) -> f64 {
        self.inverse
            .max(self.symmetry)
            .max(self.phi_normal)
            .max(self.psi_normal)
    }
}

pub fn check_matrix_identities<T: Real>(
    rho: &dyn HeightFunction<T>,
    yp: &[T],
) -> MatrixIdentityReport {
    let fm = frame_matrices(rho, yp);
    let d = fm.d;
    let mut inverse = T::zero();
    let mut symmetry = T::zero();
    for i in 0..d {
        for j in 0..d {
            let prod: T = (0..d).map(|k| fm.psi[i][k] * fm.phi[k][j]).sum();
            let delta = if i == j { T::one() } else { T::zero() };
            inverse = inverse.max((prod - delta).abs());
            symmetry = symmetry.max((fm.psi[i][j] - fm.psi[j][i]).abs());
        }
    }
    let n = fm.normal();
    let nf = fm.flat_normal();
    let phi_n = mat_vec(&fm.phi, &n, d);
    let psi_n = mat_vec(&fm.psi, &n, d);
    let mut phi_target = nf;
    let mut psi_target = nf;
    for k in 0..d {
        phi_target[k] = nf[k] / fm.scale;
        psi_target[k] = nf[k] * fm.scale;
    }
    MatrixIdentityReport {
        inverse: inverse.as_f64(),
        symmetry: symmetry.as_f64(),
        phi_normal: max_abs_diff(&phi_n, &phi_target, d).as_f64(),
        psi_normal: max_abs_diff(&psi_n, &psi_target, d).as_f64(),
    }
}

/// Tangency equivalence at a point: for a vector `v` tangent to the boundary,
/// returns `|(Phi v)_d| / |v|`; for `w` with `w_d = 0`, returns
/// `|(Psi w) . N| / |Psi w|`. Both vanish exactly in exact arithmetic.
pub fn tangency_residuals<T: Real>(
    rho: &dyn HeightFunction<T>,
    yp: &[T],
    v: &[T],
    w: &[T],
) -> (T, T) {
    let fm = frame_matrices(rho, yp);
    let d = fm.d;
    let n = fm.normal();
    let mut vt = [T::zero(); 3];
    vt[..d].copy_from_slice(&v[..d]);
    let vn = dot(&vt, &n, d);
    for k in 0..d {
        vt[k] -= vn * n[k];
    }
    let under = mat_vec(&fm.phi, &vt, d);
    let forward = under[d - 1].abs() / norm(&vt, d).max(T::min_positive_value());
    let mut wu = [T::zero(); 3];
    wu[..d - 1].copy_from_slice(&w[..d - 1]);
    let back = mat_vec(&fm.psi, &wu, d);
    let backward = dot(&back, &n, d).abs() / norm(&back, d).max(T::min_positive_value());
    (forward, backward)
}

/// Quadratic vector field `v_i(x) = c_i + sum_j L_ij x_j + sum_{j,k} Q_ijk x_j x_k`
/// used as a test field for the derivative identities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticField<T> {
    pub d: usize,
    pub c: Vec3<T>,
    pub l: Mat3<T>,
    pub q: [Mat3<T>; 3],
}

impl<T: Real> QuadraticField<T> {
    pub fn eval(&self, x: &Vec3<T>) -> Vec3<T> {
        let d = self.d;
        let mut out = [T::zero(); 3];
        for i in 0..d {
            let mut s = self.c[i];
            for j in 0..d {
                s += self.l[i][j] * x[j];
                for k in 0..d {
                    s += self.q[i][j][k] * x[j] * x[k];
                }
            }
            out[i] = s;
        }
        out
    }

    /// `(grad v)_ij = d v_i / d x_j`
    pub fn gradient(&self, x: &Vec3<T>) -> Mat3<T> {
        let d = self.d;
        let mut g = [[T::zero(); 3]; 3];
        for i in 0..d {
            for j in 0..d {
                let mut s = self.l[i][j];
                for k in 0..d {
                    s += (self.q[i][j][k] + self.q[i][k][j]) * x[k];
                }
                g[i][j] = s;
            }
        }
        g
    }
}

/// Traction identity at `(y', 0)`: the tangential part of `grad v N` equals
/// `-(d_d vbar', grad' rho . d_d vbar') / scale`, where
/// `vbar(y) = Phi(y') v(psi(y))` and `d_d` is taken by a central difference in
/// `y_d` (exact here because `vbar` is quadratic in `y_d`). Returns the max
/// absolute residual.
pub fn traction_identity_residual<T: Real>(
    rho: &dyn HeightFunction<T>,
    yp: &[T],
    v: &QuadraticField<T>,
) -> T {
    let fm = frame_matrices(rho, yp);
    let d = fm.d;
    let under = |yd: T| {
        let mut y = [T::zero(); 3];
        y[..d - 1].copy_from_slice(&yp[..d - 1]);
        y[d - 1] = yd;
        let x = psi_map(rho, &y[..d]).expect("dimension matches");
        mat_vec(&fm.phi, &v.eval(&x), d)
    };
    let step = T::lit(1e-3);
    let (plus, minus) = (under(step), under(-step));
    let mut dd = [T::zero(); 3];
    for k in 0..d {
        dd[k] = (plus[k] - minus[k]) / (T::two() * step);
    }
    let mut x0 = [T::zero(); 3];
    x0[..d - 1].copy_from_slice(&yp[..d - 1]);
    x0[d - 1] = rho.value(yp);
    let gv = v.gradient(&x0);
    let n = fm.normal();
    let gn = mat_vec(&gv, &n, d);
    let nn = dot(&gn, &n, d);
    let mut lhs = [T::zero(); 3];
    for k in 0..d {
        lhs[k] = gn[k] - nn * n[k];
    }
    let mut rhs = [T::zero(); 3];
    let mut tail = T::zero();
    for k in 0..d - 1 {
        rhs[k] = -dd[k] / fm.scale;
        tail += fm.grad_rho[k] * dd[k];
    }
    rhs[d - 1] = -tail / fm.scale;
    max_abs_diff(&lhs, &rhs, d)
}

/// For a tangent vector `v`, the first `d - 1` components of `Phi v` agree
/// with those of `v`. Returns the max absolute residual.
pub fn tangential_components_residual<T: Real>(
    rho: &dyn HeightFunction<T>,
    yp: &[T],
    v: &[T],
) -> T {
    let fm = frame_matrices(rho, yp);
    let d = fm.d;
    let n = fm.normal();
    let mut vt = [T::zero(); 3];
    vt[..d].copy_from_slice(&v[..d]);
    let vn = dot(&vt, &n, d);
    for k in 0..d {
        vt[k] -= vn * n[k];
    }
    let under = mat_vec(&fm.phi, &vt, d);
    (0..d - 1).fold(T::zero(), |m, k| m.max((under[k] - vt[k]).abs()))
}

/// Maximum residuals of every frame identity over a randomized sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameSuiteReport {
    pub samples: usize,
    pub inverse: f64,
    pub symmetry: f64,
    pub phi_normal: f64,
    pub psi_normal: f64,
    pub tangency_forward: f64,
    pub tangency_backward: f64,
    pub normal_component: f64,
    pub round_trip: f64,
    pub traction: f64,
    pub tangential_components: f64,
}

impl FrameSuiteReport {
    pub fn max_residual(&self) -> f64 {
        [
            self.inverse,
            self.symmetry,
            self.phi_normal,
            self.psi_normal,
            self.tangency_forward,
            self.tangency_backward,
            self.normal_component,
            self.round_trip,
            self.traction,
            self.tangential_components,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    fn absorb(&mut self, other: &FrameSuiteReport) {
        self.samples += other.samples;
        self.inverse = self.inverse.max(other.inverse);
        self.symmetry = self.symmetry.max(other.symmetry);
        self.phi_normal = self.phi_normal.max(other.phi_normal);
        self.psi_normal = self.psi_normal.max(other.psi_normal);
        self.tangency_forward = self.tangency_forward.max(other.tangency_forward);
        self.tangency_backward = self.tangency_backward.max(other.tangency_backward);
        self.normal_component = self.normal_component.max(other.normal_component);
        self.round_trip = self.round_trip.max(other.round_trip);
        self.traction = self.traction.max(other.traction);
        self.tangential_components = self.tangential_components.max(other.tangential_components);
    }

    fn empty() -> Self {
        FrameSuiteReport {
            samples: 0,
            inverse: 0.0,
            symmetry: 0.0,
            phi_normal: 0.0,
            psi_normal: 0.0,
            tangency_forward: 0.0,
            tangency_backward: 0.0,
            normal_component: 0.0,
            round_trip: 0.0,
            traction: 0.0,
            tangential_components: 0.0,
        }
    }
}

/// Runs every identity at `points` random boundary points `y' in [-r, r]^{d-1}`
/// of the given height function, with random test vectors and quadratic test
/// fields drawn from `rng`.
pub fn check_frame_at_points<T: Real, R: rand::Rng>(
    rho: &dyn HeightFunction<T>,
    points: usize,
    r: f64,
    rng: &mut R,
) -> FrameSuiteReport {
    let d = rho.dim();
    let mut report = FrameSuiteReport::empty();
    let u = |rng: &mut R| T::lit(rng.gen_range(-1.0..1.0));
    for _ in 0..points {
        let yp = [T::lit(rng.gen_range(-r..r)), T::lit(rng.gen_range(-r..r))];
        let l = check_matrix_identities(rho, &yp);
        let v = [u(rng), u(rng), u(rng)];
        let w = [u(rng), u(rng), u(rng)];
        let (fwd, bwd) = tangency_residuals(rho, &yp, &v, &w);
        let fm = frame_matrices(rho, &yp);
        let n = fm.normal();
        let under_n = mat_vec(&fm.phi, &n, d);
        let normal_component = (under_n[d - 1] + fm.scale.recip()).abs();
        let there = frame_transfer(&v[..d], rho, &yp, Direction::ToUnderline).expect("sized");
        let back = frame_transfer(&there[..d], rho, &yp, Direction::FromUnderline).expect("sized");
        let round_trip = max_abs_diff(&back, &v, d);
        let mut q = QuadraticField {
            d,
            c: [T::zero(); 3],
            l: [[T::zero(); 3]; 3],
            q: [[[T::zero(); 3]; 3]; 3],
        };
        for i in 0..d {
            q.c[i] = u(rng);
            for j in 0..d {
                q.l[i][j] = u(rng);
                for k in 0..d {
                    q.q[i][j][k] = u(rng);
                }
            }
        }
        let traction = traction_identity_residual(rho, &yp, &q);
        let tangential = tangential_components_residual(rho, &yp, &v);
        report.absorb(&FrameSuiteReport {
            samples: 1,
            inverse: l.inverse,
            symmetry: l.symmetry,
            phi_normal: l.phi_normal,
            psi_normal: l.psi_normal,
            tangency_forward: fwd.as_f64(),
            tangency_backward: bwd.as_f64(),
            normal_component: normal_component.as_f64(),
            round_trip: round_trip.as_f64(),
            traction: traction.as_f64(),
            tangential_components: tangential.as_f64(),
        });
    }
    report
}

/// [`check_frame_at_points`] with a seeded generator.
pub fn check_frame_seeded<T: Real>(
    rho: &dyn HeightFunction<T>,
    points: usize,
    r: f64,
    seed: u64,
) -> FrameSuiteReport {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    check_frame_at_points(rho, points, r, &mut rng)
}

/// Random polynomial height of total degree `<= degree` with `rho(0) = 0` and
/// coefficients in `[-1, 1]`.
pub fn random_polynomial<T: Real, R: rand::Rng>(
    d: usize,
    degree: usize,
    rng: &mut R,
) -> Result<PolynomialHeight<T>> {
    let mut terms = Vec::new();
    for a in 0..=degree {
        let bmax = if d == 3 { degree - a } else { 0 };
        for b in 0..=bmax {
            if a + b > 0 {
                terms.push((a, b, T::lit(rng.gen_range(-1.0..1.0))));
            }
        }
    }
    PolynomialHeight::new(d, terms)
}

/// Runs [`check_frame_at_points`] over `count` random polynomial heights in
/// dimension `d`, one point per height.
pub fn randomized_frame_suite<T: Real>(
    d: usize,
    count: usize,
    seed: u64,
) -> Result<FrameSuiteReport> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut report = FrameSuiteReport::empty();
    for _ in 0..count {
        let rho = random_polynomial::<T, _>(d, 3, &mut rng)?;
        report.absorb(&check_frame_at_points(&rho, 1, 1.0, &mut rng));
    }
    Ok(report)
}
